#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gmlot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmlot"))
        .args(args)
        .output()
        .expect("spawn gmlot")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Labeled CSV of blobs: `per_class` points spread uniformly around a
/// center for each of `classes` classes, in dimension `d`. The centers
/// depend only on `d` and `classes`, so files written with different
/// seeds share them.
pub fn blobs_csv(path: &Path, d: usize, classes: usize, per_class: usize, spread: f64, seed: u64) {
    let mut crng = ChaCha8Rng::seed_from_u64(1000 + d as u64);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| crng.gen_range(-3.0..3.0)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::new();
    for i in 0..classes * per_class {
        let k = i % classes;
        for c in &centers[k] {
            write!(s, "{},", c + spread * rng.gen_range(-1.0..1.0)).unwrap();
        }
        writeln!(s, "{k}").unwrap();
    }
    std::fs::write(path, s).unwrap();
}

/// Unlabeled CSV of `n` points uniform in the unit cube.
pub fn random_csv(path: &Path, d: usize, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::new();
    for _ in 0..n {
        let row: Vec<String> = (0..d).map(|_| rng.gen::<f64>().to_string()).collect();
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    std::fs::write(path, s).unwrap();
}

/// Sorted (name, bytes) of every file in `dir`.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rd
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

pub fn out_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}
