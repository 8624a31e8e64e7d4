//! Replays the checked-in fuzz seeds, plus truncations and byte flips of
//! each, through every parser entry point. Valid seeds must parse.

use std::path::{Path, PathBuf};

use photoseq_core::cache::Manifest;
use photoseq_core::io::decode_png;
use photoseq_core::sequencer::parse_exposure_list;
use photoseq_core::training::Checkpoint;
use photoseq_core::{container, Decomposer, NoiseParams, ToolkitConfig};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn mutations(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let step = (bytes.len() / 24).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        out.push(bytes[..cut].to_vec());
    }
    for i in (0..bytes.len()).step_by(step) {
        for flip in [0x01u8, 0x80, 0xff] {
            let mut b = bytes.to_vec();
            b[i] ^= flip;
            out.push(b);
        }
    }
    out
}

fn replay(target: &str, parse: impl Fn(&[u8]) -> bool) {
    for (path, bytes) in seeds(target) {
        assert!(parse(&bytes), "seed {} does not parse", path.display());
        for m in mutations(&bytes) {
            parse(&m);
        }
    }
}

fn text(b: &[u8]) -> Option<&str> {
    std::str::from_utf8(b).ok()
}

#[test]
fn config_seeds() {
    replay("parse_config", |b| text(b).is_some_and(|t| ToolkitConfig::parse(t).is_ok()));
}

#[test]
fn noise_seeds() {
    replay("parse_noise_params", |b| text(b).is_some_and(|t| NoiseParams::parse(t).is_ok()));
}

#[test]
fn weight_seeds() {
    replay("decode_weights", |b| container::decode(b).and_then(|(m, t)| Decomposer::from_parts(&m, t)).is_ok());
}

#[test]
fn checkpoint_seeds() {
    replay("decode_checkpoint", |b| Checkpoint::decode(b).is_ok());
}

#[test]
fn png_seeds() {
    replay("decode_png", |b| decode_png(b).is_ok());
}

#[test]
fn manifest_seeds() {
    replay("parse_manifest", |b| text(b).is_some_and(|t| Manifest::parse(t).is_ok()));
}

#[test]
fn exposure_list_seeds() {
    replay("parse_exposure_list", |b| text(b).is_some_and(|t| parse_exposure_list(t).is_ok()));
}
