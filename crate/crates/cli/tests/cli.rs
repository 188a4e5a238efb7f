use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stc_cli::codec_tool::{read_raw_tensor, write_raw_tensor};
use stc_core::compress::{stc_compress, Densify};
use stc_core::FlatTensor;
use tempfile::TempDir;

fn stcfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stcfl")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const BLOB_RUN: &str = "\
# smoke run
dataset = blobs
method = stc
num_clients = 10
participation = 0.5
p_up = 0.05
p_down = 0.05
lr = 0.05
total_iterations = 200
eval_every = 50
";

#[test]
fn train_emits_csv_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", BLOB_RUN);
    let a = stcfl(&["train", &cfg]);
    let b = stcfl(&["train", &cfg]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["round", "iterations", "test_accuracy", "bits_up_cum", "bits_down_cum"]);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.last().unwrap()[1], "200");
    for r in &rows[1..] {
        assert_eq!(r.len(), 5);
        let acc: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn overrides_and_wall_clock_column() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", BLOB_RUN);
    let out = dir.path().join("out.csv");
    let r = stcfl(&[
        "train",
        &cfg,
        "--set",
        "total_iterations=100",
        "--set",
        "method=fedavg",
        "--set",
        "delay_n=10",
        "--wall-clock",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.starts_with("round,iterations,test_accuracy,bits_up_cum,bits_down_cum,wall_seconds\n"));
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "10");
    assert_eq!(last[1], "100");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let no_method = write(dir.path(), "a.cfg", "dataset = blobs\nlr = 0.1\n");
    let r = stcfl(&["train", &no_method]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("method"));

    let typo = write(dir.path(), "b.cfg", "dataset = blobs\nmethod = stc\nnum_client = 4\n");
    let r = stcfl(&["train", &typo]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("num_client"));

    let bad_value = write(dir.path(), "c.cfg", "dataset = blobs\nmethod = stc\nparticipation = 2\n");
    let r = stcfl(&["train", &bad_value]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("participation"));
}

#[test]
fn missing_data_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.cfg", "dataset = mnist\ndata_dir = nowhere\nmethod = stc\n");
    let r = stcfl(&["train", &cfg]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn split_reports_every_client() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.cfg", "dataset = blobs\nnum_clients = 20\nclasses_per_client = 1\n");
    let r = stcfl(&["split", &cfg]);
    assert!(r.status.success());
    let text = String::from_utf8(r.stdout).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("client_id,size,distinct_classes,class_0,"));
}

fn random_tensor(len: usize, seed: u64) -> FlatTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FlatTensor::from((0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>())
}

#[test]
fn codec_roundtrip_matches_library() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("t.f32");
    let enc = dir.path().join("t.stc1");
    let dec = dir.path().join("back.f32");
    let t = random_tensor(5000, 1);
    write_raw_tensor(&raw, &t).unwrap();
    let r = stcfl(&["codec", "encode", "--input", raw.to_str().unwrap(), "--output", enc.to_str().unwrap(), "--p", "0.01"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = stcfl(&["codec", "decode", "--input", enc.to_str().unwrap(), "--output", dec.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(read_raw_tensor(&dec).unwrap(), stc_compress(&t, 0.01).unwrap().densify());

    let r = stcfl(&["codec", "inspect", enc.to_str().unwrap()]);
    let line = String::from_utf8(r.stdout).unwrap();
    assert!(line.starts_with("len=5000 k=50 bstar=6 "), "{line}");
}

#[test]
fn codec_inspects_empty_update() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("z.f32");
    let enc = dir.path().join("z.stc1");
    write_raw_tensor(&raw, &FlatTensor::zeros(64)).unwrap();
    let r = stcfl(&["codec", "encode", "--input", raw.to_str().unwrap(), "--output", enc.to_str().unwrap(), "--p", "0.1"]);
    assert!(r.status.success());
    let r = stcfl(&["codec", "inspect", enc.to_str().unwrap()]);
    assert!(String::from_utf8(r.stdout).unwrap().contains(" k=0 "));
}

#[test]
fn codec_rejects_truncated_files() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("t.f32");
    let enc = dir.path().join("t.stc1");
    write_raw_tensor(&raw, &random_tensor(2000, 2)).unwrap();
    stcfl(&["codec", "encode", "--input", raw.to_str().unwrap(), "--output", enc.to_str().unwrap(), "--p", "0.05"]);
    let bytes = fs::read(&enc).unwrap();
    fs::write(&enc, &bytes[..bytes.len() - 3]).unwrap();
    let out = dir.path().join("o.f32");
    let r = stcfl(&["codec", "decode", "--input", enc.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
    let r = stcfl(&["codec", "inspect", enc.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
}
