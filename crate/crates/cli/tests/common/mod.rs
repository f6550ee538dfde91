//! Shared helpers for the CLI test suites. Each test binary compiles its own
//! copy, so not every helper is used everywhere.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Repo-level directory holding dataset folders (`mnist/`, `cifar10/`).
/// Overridable through PORTANET_DATA_DIR.
pub fn data_dir() -> PathBuf {
    match std::env::var("PORTANET_DATA_DIR") {
        Ok(dir) => PathBuf::from(dir),
        Err(_) => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn mnist_dir() -> PathBuf {
    data_dir().join("mnist")
}

pub fn cifar_dir() -> PathBuf {
    data_dir().join("cifar10")
}

pub fn require_dataset(dir: &Path, probe: &str) {
    assert!(
        dir.join(probe).exists(),
        "dataset file {} not found; fetch the datasets into {} or set PORTANET_DATA_DIR \
         (see README)",
        dir.join(probe).display(),
        dir.display()
    );
}

pub fn run_cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portanet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to launch portanet binary")
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Minimal 8x8 IDX dataset pair plus a matching net/solver config, written
/// into `dir`. Returns (net path, solver path).
pub fn write_synthetic_workspace(dir: &Path, samples: usize) -> (PathBuf, PathBuf) {
    use std::io::Write;

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..samples {
        let class = (i % 2) as u8;
        labels.push(class);
        for y in 0..8u8 {
            for x in 0..8u8 {
                // class 0 bright on top rows, class 1 bright on left columns
                let v = if class == 0 {
                    if y < 4 {
                        200
                    } else {
                        30
                    }
                } else if x < 4 {
                    200
                } else {
                    30
                };
                images.push(v + ((i as u8).wrapping_mul(7) % 11));
            }
        }
    }

    let write_pair = |img_name: &str, lbl_name: &str| {
        let mut f = std::fs::File::create(dir.join(img_name)).unwrap();
        f.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
        f.write_all(&(samples as u32).to_be_bytes()).unwrap();
        f.write_all(&8u32.to_be_bytes()).unwrap();
        f.write_all(&8u32.to_be_bytes()).unwrap();
        f.write_all(&images).unwrap();
        let mut f = std::fs::File::create(dir.join(lbl_name)).unwrap();
        f.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
        f.write_all(&(samples as u32).to_be_bytes()).unwrap();
        f.write_all(&labels).unwrap();
    };
    write_pair("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
    write_pair("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

    let net_path = dir.join("tiny.net");
    std::fs::write(
        &net_path,
        "\
[layer]
name = input
type = data
top = data
channels = 1
height = 8
width = 8

[layer]
name = conv1
type = conv
bottom = data
top = conv1
num_output = 4
kernel = 3

[layer]
name = pool1
type = pool
bottom = conv1
top = pool1
method = max
kernel = 2
stride = 2

[layer]
name = relu1
type = relu
bottom = pool1
top = pool1

[layer]
name = ip1
type = ip
bottom = pool1
top = ip1
num_output = 2

[layer]
name = loss
type = softmax_loss
bottom = ip1
top = loss
",
    )
    .unwrap();

    let solver_path = dir.join("tiny.solver");
    std::fs::write(
        &solver_path,
        "\
[solver]
base_lr = 0.05
lr_policy = fixed
momentum = 0.9
max_iter = 10
test_interval = 5
test_iter = 1
seed = 3
",
    )
    .unwrap();
    (net_path, solver_path)
}
