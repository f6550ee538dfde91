//! Command-line front end: train, test, and time subcommands with backend
//! selection. Results go to stdout as `key=value` pairs; diagnostics go to
//! stderr. The backend flag changes timing only, never a printed number.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use portanet_core::config;
use portanet_core::data::{self, Dataset};
use portanet_core::engine::{Policy, THREADS_ENV};
use portanet_core::error::{Error, Result};
use portanet_core::net::Net;
use portanet_core::rng::Pcg32;
use portanet_core::snapshot;
use portanet_core::solver::{snapshot_path, Solver, TrainEvent};
use portanet_core::tensor::Tensor;

const USAGE: &str = "\
portanet <train|test|time> [flags]

  train --net FILE --solver FILE --data-dir DIR [--snapshot PREFIX]
        [--backend seq|threads] [--threads N] [--batch N]
  test  --net FILE --snapshot FILE --data-dir DIR
        [--backend seq|threads] [--threads N] [--batch N] [--iterations N]
  time  --net FILE [--backend seq|threads] [--threads N] [--batch N]
        [--iterations N] [--seed N]

Flags:
  --net FILE        net config ([layer] sections)
  --solver FILE     solver config ([solver] section; train only)
  --snapshot PATH   snapshot prefix (train) or snapshot file (test)
  --data-dir DIR    directory holding MNIST IDX files or CIFAR-10 batches
  --backend MODE    seq (default) or threads
  --threads N       worker threads (default: PORTANET_THREADS or all cores)
  --batch N         batch size (default 64)
  --iterations N    timing/test iterations (time default 50)
  --seed N          seed for weight init outside training (default 1)
";

#[derive(Debug, Default)]
struct Cli {
    subcommand: String,
    net: Option<PathBuf>,
    solver: Option<PathBuf>,
    snapshot: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    backend: Option<String>,
    threads: Option<usize>,
    batch: Option<usize>,
    iterations: Option<usize>,
    seed: Option<u64>,
}

fn parse_args(args: &[String]) -> Result<Cli> {
    let mut cli = Cli::default();
    let mut it = args.iter();
    cli.subcommand = it
        .next()
        .cloned()
        .ok_or_else(|| Error::InvalidInput("missing subcommand".into()))?;
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next()
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("flag {flag} needs a value")))
        };
        match flag.as_str() {
            "--net" => cli.net = Some(PathBuf::from(value()?)),
            "--solver" => cli.solver = Some(PathBuf::from(value()?)),
            "--snapshot" => cli.snapshot = Some(PathBuf::from(value()?)),
            "--data-dir" => cli.data_dir = Some(PathBuf::from(value()?)),
            "--backend" => cli.backend = Some(value()?),
            "--threads" => {
                cli.threads = Some(value()?.parse().map_err(|_| {
                    Error::InvalidInput("--threads expects a positive integer".into())
                })?)
            }
            "--batch" => {
                cli.batch = Some(value()?.parse().map_err(|_| {
                    Error::InvalidInput("--batch expects a positive integer".into())
                })?)
            }
            "--iterations" => {
                cli.iterations = Some(value()?.parse().map_err(|_| {
                    Error::InvalidInput("--iterations expects a positive integer".into())
                })?)
            }
            "--seed" => {
                cli.seed = Some(value()?.parse().map_err(|_| {
                    Error::InvalidInput("--seed expects an integer".into())
                })?)
            }
            other => {
                return Err(Error::InvalidInput(format!("unknown flag '{other}'")));
            }
        }
    }
    Ok(cli)
}

fn policy_of(cli: &Cli) -> Result<Policy> {
    match cli.backend.as_deref() {
        None | Some("seq") => Ok(Policy::Sequential),
        Some("threads") => {
            // flag wins over PORTANET_THREADS, which wins over core count
            let threads = cli.threads.unwrap_or_else(Policy::threads_from_env);
            Ok(Policy::multithreaded(threads))
        }
        Some(other) => Err(Error::InvalidInput(format!(
            "--backend must be seq or threads, got '{other}'"
        ))),
    }
}

fn require(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::InvalidInput(format!("missing required flag {flag}")))
}

enum DatasetKind {
    Mnist,
    Cifar10,
}

fn detect_dataset(dir: &Path) -> Result<DatasetKind> {
    if dir.join("train-images-idx3-ubyte").exists() {
        Ok(DatasetKind::Mnist)
    } else if dir.join("data_batch_1.bin").exists() {
        Ok(DatasetKind::Cifar10)
    } else {
        Err(Error::InvalidInput(format!(
            "{}: found neither train-images-idx3-ubyte (MNIST) nor data_batch_1.bin (CIFAR-10)",
            dir.display()
        )))
    }
}

/// Training split plus held-out split; CIFAR also yields its mean image.
fn load_splits(dir: &Path) -> Result<(Dataset, Dataset, Option<Tensor>)> {
    match detect_dataset(dir)? {
        DatasetKind::Mnist => {
            let train = data::load_mnist(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = data::load_mnist(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            Ok((train, test, None))
        }
        DatasetKind::Cifar10 => {
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            let (train, mean) = data::load_cifar10(&batches, None)?;
            let (test, _) = data::load_cifar10(&[dir.join("test_batch.bin")], Some(&mean))?;
            Ok((train, test, Some(mean)))
        }
    }
}

fn check_input_dims(net: &Net, ds: &Dataset) -> Result<()> {
    if net.input_dims() != ds.image_dims() {
        return Err(Error::ShapeMismatch(format!(
            "net expects input {:?}, dataset provides {:?}",
            net.input_dims(),
            ds.image_dims()
        )));
    }
    Ok(())
}

fn run_train(cli: &Cli) -> Result<()> {
    let net_path = require(&cli.net, "--net")?;
    let solver_path = require(&cli.solver, "--solver")?;
    let data_dir = require(&cli.data_dir, "--data-dir")?;
    let policy = policy_of(cli)?;
    let batch = cli.batch.unwrap_or(64);
    let snapshot_prefix = cli.snapshot.clone().unwrap_or_else(|| "snapshot".into());

    let spec = config::load_net(&net_path)?;
    let mut solver_spec = config::load_solver(&solver_path)?;
    if let Some(seed) = cli.seed {
        // flag wins over the config for both init and shuffling
        solver_spec.seed = seed;
    }
    let seed = solver_spec.seed;

    let (train_ds, test_ds, mean) = load_splits(&data_dir)?;
    if let Some(mean) = &mean {
        let mean_path = snapshot_path(&snapshot_prefix, "mean");
        snapshot::save_tensor(&mean_path, mean)?;
        eprintln!("wrote dataset mean to {}", mean_path.display());
    }

    let mut net = Net::build(&spec, batch, seed)?;
    check_input_dims(&net, &train_ds)?;
    net.set_policy(policy);

    let mut solver = Solver::new(solver_spec)?;
    solver.train(
        &mut net,
        &train_ds,
        Some(&test_ds),
        Some(&snapshot_prefix),
        &mut |event| match event {
            TrainEvent::TrainIter { iter, loss } => println!("iter={iter} loss={loss}"),
            TrainEvent::Test {
                iter,
                loss,
                accuracy,
            } => println!("iter={iter} loss={loss} acc={accuracy}"),
            TrainEvent::Snapshot { iter, path } => {
                println!("iter={iter} snapshot={}", path.display())
            }
        },
    )?;
    Ok(())
}

fn run_test(cli: &Cli) -> Result<()> {
    let net_path = require(&cli.net, "--net")?;
    let snapshot_file = require(&cli.snapshot, "--snapshot")?;
    let data_dir = require(&cli.data_dir, "--data-dir")?;
    let policy = policy_of(cli)?;
    let batch = cli.batch.unwrap_or(64);

    let spec = config::load_net(&net_path)?;
    let test_ds = match detect_dataset(&data_dir)? {
        DatasetKind::Mnist => data::load_mnist(
            &data_dir.join("t10k-images-idx3-ubyte"),
            &data_dir.join("t10k-labels-idx1-ubyte"),
        )?,
        DatasetKind::Cifar10 => {
            let mean = load_sibling_mean(&snapshot_file)?;
            let (test, _) =
                data::load_cifar10(&[data_dir.join("test_batch.bin")], Some(&mean))?;
            test
        }
    };

    let mut net = Net::build(&spec, batch, cli.seed.unwrap_or(1))?;
    check_input_dims(&net, &test_ds)?;
    net.set_policy(policy);
    net.load_snapshot(&snapshot_file)?;

    let batches = cli.iterations.unwrap_or(test_ds.len() / batch);
    let (loss, accuracy) = net.evaluate(&test_ds, batches)?;
    println!("accuracy={accuracy} loss={loss}");
    Ok(())
}

/// The mean image written at train time lives beside the snapshots:
/// `<prefix>_mean.pnsn`. Probes the snapshot's own name first, then the
/// prefix with a trailing `_final` / `_iter_N` tag stripped.
fn load_sibling_mean(snapshot_file: &Path) -> Result<Tensor> {
    let stem = snapshot_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut candidates = vec![format!("{stem}_mean.pnsn")];
    if let Some(base) = stem.strip_suffix("_final") {
        candidates.push(format!("{base}_mean.pnsn"));
    }
    if let Some(pos) = stem.rfind("_iter_") {
        candidates.push(format!("{}_mean.pnsn", &stem[..pos]));
    }
    let dir = snapshot_file.parent().unwrap_or_else(|| Path::new(""));
    for name in &candidates {
        let path = dir.join(name);
        if path.exists() {
            return snapshot::load_tensor(&path);
        }
    }
    Err(Error::InvalidInput(format!(
        "no dataset mean found next to {} (tried {})",
        snapshot_file.display(),
        candidates.join(", ")
    )))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn run_time(cli: &Cli) -> Result<()> {
    let net_path = require(&cli.net, "--net")?;
    let policy = policy_of(cli)?;
    let batch = cli.batch.unwrap_or(64);
    let iterations = cli.iterations.unwrap_or(50).max(1);
    let warmup = 5;

    let spec = config::load_net(&net_path)?;
    let mut net = Net::build(&spec, batch, cli.seed.unwrap_or(1))?;
    net.set_policy(policy);

    // synthetic input so timing runs without datasets
    let mut rng = Pcg32::new(cli.seed.unwrap_or(1), 99);
    let images: Vec<f32> = (0..batch * net.sample_len())
        .map(|_| rng.uniform(0.0, 1.0))
        .collect();
    let classes = net.class_count().max(1) as u32;
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(classes) as usize).collect();

    let layer_count = net.layer_names().len();
    let mut forward_total = vec![Duration::ZERO; layer_count];
    let mut backward_total = vec![Duration::ZERO; layer_count];

    for i in 0..warmup + iterations {
        net.forward(&images, Some(&labels))?;
        net.backward()?;
        if i >= warmup {
            let (fw, bw) = net.layer_times();
            for (acc, d) in forward_total.iter_mut().zip(fw) {
                *acc += *d;
            }
            for (acc, d) in backward_total.iter_mut().zip(bw) {
                *acc += *d;
            }
        }
    }

    let names: Vec<String> = net.layer_names().iter().map(|s| s.to_string()).collect();
    let inv = 1.0 / iterations as f64;
    let mut forward_sum = 0.0;
    let mut backward_sum = 0.0;
    for ((name, fw), bw) in names.iter().zip(&forward_total).zip(&backward_total) {
        let f = ms(*fw) * inv;
        let b = ms(*bw) * inv;
        forward_sum += f;
        backward_sum += b;
        println!(
            "layer={name} forward_ms={f:.3} backward_ms={b:.3} total_ms={:.3}",
            f + b
        );
    }
    println!("total forward_ms={forward_sum:.3} backward_ms={backward_sum:.3}");
    println!(
        "average_forward_backward_ms={:.3}",
        forward_sum + backward_sum
    );
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        eprint!("{USAGE}");
        return if args.is_empty() {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        };
    }
    let run = parse_args(&args).and_then(|cli| match cli.subcommand.as_str() {
        "train" => run_train(&cli),
        "test" => run_test(&cli),
        "time" => run_time(&cli),
        other => Err(Error::InvalidInput(format!(
            "unknown subcommand '{other}'"
        ))),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!("(see portanet --help; threads default comes from {THREADS_ENV})");
            ExitCode::FAILURE
        }
    }
}
