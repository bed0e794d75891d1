#![allow(dead_code)]

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dspa_cli::io::{read_image, write_f64, Image};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dspa")
}

pub fn cameraman_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/cameraman256.pgm")
}

/// Block average of the 256x256 test image down to `size x size`.
pub fn cameraman(size: usize) -> Image {
    let full = read_image(&cameraman_path()).unwrap();
    let f = full.width / size;
    let mut data = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let mut s = 0.0;
            for i in 0..f {
                for j in 0..f {
                    s += full.data[(r * f + i) * full.width + c * f + j];
                }
            }
            data[r * size + c] = s / (f * f) as f64;
        }
    }
    Image::new(size, size, data).unwrap()
}

/// Writes a downsampled truth image into `dir` and returns its path.
pub fn small_truth(dir: &Path, size: usize) -> PathBuf {
    let p = dir.join(format!("truth{size}.f64"));
    write_f64(&p, &cameraman(size), None).unwrap();
    p
}

/// Config file with the given sections; `[data] truth` and `[output] dir`
/// point into `dir`.
pub fn write_config(
    dir: &Path,
    name: &str,
    truth: &Path,
    sampler: &str,
    parallel: &str,
) -> PathBuf {
    let text = format!(
        "[data]\ntruth = {}\nmax_intensity = 30\nseed = 5\n\n[sampler]\n{sampler}\n\n[parallel]\n{parallel}\n\n[output]\ndir = {}\n",
        truth.display(),
        dir.join(name).display()
    );
    let p = dir.join(format!("{name}.ini"));
    fs::write(&p, text).unwrap();
    p
}

pub fn dspa(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn dspa")
}

pub fn dspa_ok(args: &[&str]) -> String {
    let out = dspa(args);
    assert!(
        out.status.success(),
        "dspa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn free_ports(n: usize) -> Vec<u16> {
    let listeners: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
        .collect();
    listeners
        .iter()
        .map(|l| l.local_addr().unwrap().port())
        .collect()
}

pub fn read_bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Every `.f64` output of a run directory, by file name.
pub fn f64_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "f64"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                read_bytes(&p),
            )
        })
        .collect();
    v.sort();
    v
}

/// Asserts equal file sets with equal bytes, naming the first differing file.
pub fn assert_same(a: &[(String, Vec<u8>)], b: &[(String, Vec<u8>)]) {
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    assert_eq!(names(a), names(b));
    for ((name, x), (_, y)) in a.iter().zip(b) {
        assert!(x == y, "{name} differs");
    }
}
