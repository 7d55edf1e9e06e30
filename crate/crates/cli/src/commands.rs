//! The four subcommands. Each returns `Ok(())` on success and an error for
//! runtime failures (mapped to exit code 1 in `main`); usage errors are
//! clap's domain (exit code 2).

use crate::config::{resolve_data_dir, Overrides, RunSpec, Task};
use crate::manifest::{create_run_dir, retrieval_instructions, RunManifest};
use crate::weights;
use anyhow::{anyhow, bail, Context, Result};
use opto_dfa::data::{load_cora, load_mnist, two_blobs, Dataset};
use opto_dfa::feedback::{
    optical_project, project, slice_for_layer, ternarize, FeedbackMatrixSpec, LayerSlice,
    OpticalConfig,
};
use opto_dfa::linalg::{Element, Matrix, Precision};
use opto_dfa::models::{
    bp_backward, forward, loss_and_error, Activation, Layer, Network,
};
use opto_dfa::rng::SplitMix64;
use opto_dfa::train::{train, EpochReport, Mode, TrainConfig};
use opto_dfa::viz::{export_embedding, extract_hidden, tsne};
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Table 1 reference accuracies (percent) for the benchmark report.
pub fn reference_accuracy(task: Task, mode: Mode) -> f64 {
    match (task, mode) {
        (Task::Mnist, Mode::Bp) => 98.4,
        (Task::Mnist, Mode::Dfa) => 97.9,
        (Task::Mnist, Mode::DfaTernary) => 98.1,
        (Task::Mnist, Mode::DfaOptical) => 97.5,
        (Task::Mnist, Mode::Shallow) => 92.4,
        (Task::Cora, Mode::Bp) => 82.3,
        (Task::Cora, Mode::Dfa) => 80.9,
        (Task::Cora, Mode::DfaTernary) => 81.5,
        (Task::Cora, Mode::DfaOptical) => 80.6,
        (Task::Cora, Mode::Shallow) => 48.2,
    }
}

pub fn load_dataset<T: Element>(task: Task, data_dir: &Path) -> Result<Dataset<T>> {
    let result = match task {
        Task::Mnist => load_mnist::<T>(&data_dir.join("mnist")).map(Dataset::Tabular),
        Task::Cora => {
            let dir = data_dir.join("cora");
            let pick = |name: &str| {
                let plain = dir.join(name);
                if plain.exists() {
                    plain
                } else {
                    dir.join(format!("{name}.gz"))
                }
            };
            load_cora::<T>(&pick("cora.content"), &pick("cora.cites")).map(|g| {
                if g.skipped_citations > 0 {
                    eprintln!(
                        "warning: skipped {} citation lines referencing unknown ids",
                        g.skipped_citations
                    );
                }
                Dataset::Graph(g)
            })
        }
    };
    result.map_err(|e| anyhow!("loading {task} data: {e}\n{}", retrieval_instructions()))
}

pub fn build_network<T: Element>(spec: &RunSpec) -> Result<Network<T>> {
    let dims = spec.dims();
    let mut rng = SplitMix64::new(spec.config.weight_seed);
    let net = match spec.task {
        Task::Mnist => Network::dense(&dims, Activation::Tanh, &mut rng),
        Task::Cora => Network::graph_conv(&dims, Activation::Relu, &mut rng),
    };
    net.map_err(|e| anyhow!("building network: {e}"))
}

/// Outcome of one training run.
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub reports: Vec<EpochReport>,
}

/// Execute a resolved run: fresh run directory, manifest, streamed epoch
/// reports, weights file.
pub fn execute_train(
    spec: &RunSpec,
    data_dir: &Path,
    out_dir: &Path,
    write_weights_file: bool,
    quiet: bool,
) -> Result<TrainOutcome> {
    match spec.precision {
        Precision::F32 => execute_train_typed::<f32>(spec, data_dir, out_dir, write_weights_file, quiet),
        Precision::F64 => execute_train_typed::<f64>(spec, data_dir, out_dir, write_weights_file, quiet),
    }
}

fn execute_train_typed<T: Element>(
    spec: &RunSpec,
    data_dir: &Path,
    out_dir: &Path,
    write_weights_file: bool,
    quiet: bool,
) -> Result<TrainOutcome> {
    let manifest = RunManifest::collect(spec, data_dir)?;
    let dataset = load_dataset::<T>(spec.task, data_dir)?;
    let mut net = build_network::<T>(spec)?;

    let run_dir = create_run_dir(out_dir, spec)?;
    manifest.write(&run_dir.join("manifest.txt"))?;

    let epochs_path = run_dir.join("epochs.jsonl");
    let mut epochs_file = std::fs::File::create(&epochs_path)
        .with_context(|| format!("creating {}", epochs_path.display()))?;

    let result = train(&mut net, &dataset, &spec.config, |report| {
        let line = serde_json::to_string(report).expect("report serializes");
        let _ = writeln!(epochs_file, "{line}");
        if !quiet {
            let val = report.val_acc.map_or("-".into(), |v| format!("{:.4}", v));
            let test = report.test_acc.map_or("-".into(), |v| format!("{:.4}", v));
            println!(
                "epoch {:>3}  loss {:.4}  train {:.4}  val {val}  test {test}  ({:.1}s)",
                report.epoch, report.train_loss, report.train_acc, report.seconds
            );
        }
    });

    let reports = match result {
        Ok(reports) => reports,
        Err(e) => {
            // Leave a diagnostic snapshot next to the manifest.
            let _ = std::fs::write(
                run_dir.join("abort_snapshot.txt"),
                format!("{e}\n"),
            );
            return Err(anyhow!("training aborted: {e} (snapshot in {})", run_dir.display()));
        }
    };

    if write_weights_file {
        weights::write_weights(&net, &run_dir.join("weights.odfa"))?;
    }
    Ok(TrainOutcome { run_dir, reports })
}

pub struct TrainCmd {
    pub overrides: Overrides,
    pub config_file: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

pub fn cmd_train(args: TrainCmd) -> Result<()> {
    let mut stack = args.overrides;
    if let Some(path) = &args.config_file {
        let file = Overrides::from_config_file(path)?;
        stack = stack.merged_over(file);
        // Fingerprints recorded in a manifest being replayed must still
        // match the data on disk.
        let kv = crate::config::parse_key_values(&std::fs::read_to_string(path)?)?;
        if let Some(task) = stack.task {
            RunManifest::verify_fingerprints(&kv, task, &resolve_data_dir(args.data_dir.clone()))?;
        }
    }
    let spec = stack.resolve()?;
    let data_dir = resolve_data_dir(args.data_dir);
    let outcome = execute_train(&spec, &data_dir, &args.out_dir, true, false)?;
    let last = outcome
        .reports
        .last()
        .ok_or_else(|| anyhow!("no epochs ran"))?;
    println!(
        "done: test accuracy {}  (artifacts in {})",
        last.test_acc.map_or("-".into(), |v| format!("{:.4}", v)),
        outcome.run_dir.display()
    );
    Ok(())
}

pub struct BenchCmd {
    pub task: Option<Task>,
    pub seeds: u64,
    pub quick: bool,
    pub precision: Precision,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Per-(task, mode) tuned configuration for the benchmark grid. The optical
/// rows reuse the ternarized rows' hyperparameters with only the threshold
/// retuned, mirroring how the physical system was operated.
pub fn bench_spec(task: Task, mode: Mode, quick: bool, precision: Precision) -> RunSpec {
    let defaults = task.defaults(mode);
    let mut config = defaults.config.clone();
    let mut hidden = defaults.dims[1..defaults.dims.len() - 1].to_vec();
    match task {
        Task::Mnist => {
            if quick {
                hidden = vec![256, 256];
                config.epochs = 5;
            }
        }
        Task::Cora => {}
    }
    RunSpec {
        task,
        precision,
        hidden,
        config,
    }
}

pub fn cmd_bench(args: BenchCmd) -> Result<()> {
    let tasks: Vec<Task> = match args.task {
        Some(t) => vec![t],
        None => vec![Task::Mnist, Task::Cora],
    };
    let mut rows = Vec::new();
    let mut any_failed = false;

    for &task in &tasks {
        for mode in Mode::ALL {
            let mut accs = Vec::new();
            let mut failure: Option<String> = None;
            for seed in 0..args.seeds {
                let mut spec = bench_spec(task, mode, args.quick, args.precision);
                spec.config.weight_seed = spec.config.weight_seed.wrapping_add(seed);
                spec.config.shuffle_seed = spec.config.shuffle_seed.wrapping_add(seed);
                spec.config.noise_seed = spec.config.noise_seed.wrapping_add(seed);
                spec.config.feedback_seed = spec.config.feedback_seed.wrapping_add(seed);
                let data_dir = resolve_data_dir(args.data_dir.clone());
                match execute_train(&spec, &data_dir, &args.out_dir, false, true) {
                    Ok(outcome) => {
                        let acc = outcome
                            .reports
                            .last()
                            .and_then(|r| r.test_acc)
                            .unwrap_or(f64::NAN)
                            * 100.0;
                        eprintln!("bench {task}/{mode} seed {seed}: test {acc:.2}");
                        accs.push(acc);
                    }
                    Err(e) => {
                        eprintln!("bench {task}/{mode} seed {seed}: FAILED: {e}");
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            rows.push((task, mode, accs, failure));
        }
    }

    let mut table = String::new();
    table.push_str("task\tmode\treference\tmean\tstd\tseeds\tstatus\n");
    for (task, mode, accs, failure) in &rows {
        let reference = reference_accuracy(*task, *mode);
        if let Some(f) = failure {
            any_failed = true;
            table.push_str(&format!(
                "{task}\t{mode}\t{reference:.1}\t-\t-\t{}\tFAILED: {f}\n",
                accs.len()
            ));
            continue;
        }
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        table.push_str(&format!(
            "{task}\t{mode}\t{reference:.1}\t{mean:.2}\t{std:.2}\t{}\tok\n",
            accs.len()
        ));
    }

    print!("{table}");
    std::fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("bench_report.tsv");
    std::fs::write(&report_path, &table)?;
    println!("report written to {}", report_path.display());
    if any_failed {
        bail!("one or more benchmark cells failed");
    }
    Ok(())
}

pub struct CheckCmd {
    /// Feedback spec size for the oracle suite, as (out_dim, in_dim).
    pub size: (usize, usize),
    /// Negative-control hook: flip the sign of analytic gradients inside
    /// the finite-difference check; the check must then fail.
    pub inject_sign_flip: bool,
}

pub fn cmd_check(args: CheckCmd) -> Result<()> {
    let mut all_ok = true;
    let mut report = |name: &str, outcome: std::result::Result<(), String>| {
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                all_ok = false;
            }
        }
    };

    report(
        "gradient-finite-differences",
        check_gradients(args.inject_sign_flip),
    );
    report("decomposition-identity", check_decomposition(args.size));
    report("slice-consistency", check_slices(args.size));
    report("seed-determinism", check_determinism());

    if !all_ok {
        bail!("self-checks failed");
    }
    Ok(())
}

/// BP gradients against central finite differences on random small nets
/// (dense tanh and graph-conv relu), 64-bit, relative error below 1e-5.
fn check_gradients(inject_sign_flip: bool) -> std::result::Result<(), String> {
    let flip = if inject_sign_flip { -1.0 } else { 1.0 };
    for seed in 0..5u64 {
        let mut rng = SplitMix64::new(100 + seed);
        let net = Network::<f64>::dense(&[6, 9, 7, 4], Activation::Tanh, &mut rng)
            .map_err(|e| e.to_string())?;
        let mut data_rng = SplitMix64::new(200 + seed);
        let x = Matrix::from_fn(4, 6, |_, _| data_rng.next_range(-1.0, 1.0));
        let y = Matrix::from_fn(4, 4, {
            let t: Vec<usize> = (0..4).map(|_| data_rng.next_below(4)).collect();
            move |i, j| if t[i] == j { 1.0 } else { 0.0 }
        });
        let (yhat, trace) = forward(&net, &x, None).map_err(|e| e.to_string())?;
        let (_, e) = loss_and_error(&yhat, &y, None).map_err(|e| e.to_string())?;
        let grads = bp_backward(&net, &trace, &e, None).map_err(|e| e.to_string())?;

        let h = 1e-6;
        for li in 0..net.layers().len() {
            let (rows, cols) = net.layers()[li].weights().shape();
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    if let Layer::Dense(l) = &mut plus.layers_mut()[li] {
                        l.w.set(i, j, l.w.get(i, j) + h);
                    }
                    if let Layer::Dense(l) = &mut minus.layers_mut()[li] {
                        l.w.set(i, j, l.w.get(i, j) - h);
                    }
                    let lp = {
                        let (yh, _) = forward(&plus, &x, None).map_err(|e| e.to_string())?;
                        loss_and_error(&yh, &y, None).map_err(|e| e.to_string())?.0
                    };
                    let lm = {
                        let (yh, _) = forward(&minus, &x, None).map_err(|e| e.to_string())?;
                        loss_and_error(&yh, &y, None).map_err(|e| e.to_string())?.0
                    };
                    let numeric = (lp - lm) / (2.0 * h);
                    let analytic = flip * grads[li].d_w.get(i, j);
                    let scale = 1.0f64.max(numeric.abs()).max(analytic.abs());
                    if (numeric - analytic).abs() > 1e-5 * scale {
                        return Err(format!(
                            "seed {seed} layer {li} ({i},{j}): analytic {analytic:.3e}, numeric {numeric:.3e}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Ternary decomposition identity: pos/neg split vs direct ternary
/// projection at 1e-9 relative, and bitwise equality of the noiseless
/// optical path.
fn check_decomposition((out_dim, in_dim): (usize, usize)) -> std::result::Result<(), String> {
    let spec = FeedbackMatrixSpec::new(4242, out_dim, in_dim);
    let mut rng = SplitMix64::new(7);
    for trial in 0..200 {
        let e: Vec<f64> = (0..in_dim).map(|_| rng.next_gauss()).collect();
        let tau = 0.05 + rng.next_f64();
        let t = ternarize(&e, tau).map_err(|e| e.to_string())?;
        let p_pos = project(&spec, &t.pos_vector()).map_err(|e| e.to_string())?;
        let p_neg = project(&spec, &t.neg_vector()).map_err(|e| e.to_string())?;
        let p_val = project(&spec, &t.values).map_err(|e| e.to_string())?;
        for k in 0..out_dim {
            let split = p_pos[k] - p_neg[k];
            let scale = 1.0f64.max(split.abs()).max(p_val[k].abs());
            if (split - p_val[k]).abs() > 1e-9 * scale {
                return Err(format!("trial {trial} row {k}: {split} vs {}", p_val[k]));
            }
        }
        let opt = optical_project(&spec, &e, &OpticalConfig::new(0.0, tau), trial)
            .map_err(|e| e.to_string())?;
        for k in 0..out_dim {
            if opt[k].to_bits() != p_val[k].to_bits() {
                return Err(format!("trial {trial} row {k}: noiseless optical not bitwise"));
            }
        }
    }
    Ok(())
}

/// Implicit projection plus slicing vs materialized matrix at 1e-12.
fn check_slices((out_dim, in_dim): (usize, usize)) -> std::result::Result<(), String> {
    let mut rng = SplitMix64::new(99);
    for trial in 0..50u64 {
        let spec = FeedbackMatrixSpec::new(trial, out_dim, in_dim);
        let b = spec.materialize();
        let e: Vec<f64> = (0..in_dim).map(|_| rng.next_gauss()).collect();
        let full = project(&spec, &e).map_err(|e| e.to_string())?;
        let width = 1 + (trial as usize % out_dim.max(1)).min(out_dim - 1);
        let offset = (trial as usize * 7) % (out_dim - width + 1);
        let slice = LayerSlice::new(offset, width);
        let got = slice_for_layer(&full, slice).map_err(|e| e.to_string())?;
        for (k, g) in got.iter().enumerate() {
            let want: f64 = b[offset + k].iter().zip(&e).map(|(w, x)| w * x).sum();
            if (g - want).abs() > 1e-12 * 1.0f64.max(want.abs()) {
                return Err(format!("trial {trial} slice row {k}: {g} vs {want}"));
            }
        }
    }
    Ok(())
}

/// Two identical 64-bit training runs on synthetic data produce bit-equal
/// serialized weights.
fn check_determinism() -> std::result::Result<(), String> {
    let run = || -> std::result::Result<Vec<u8>, String> {
        let data = Dataset::Tabular(two_blobs::<f64>(24, 6, 5));
        let mut cfg = TrainConfig::new(Mode::DfaOptical);
        cfg.epochs = 4;
        cfg.batch_size = 12;
        cfg.lr = 0.3;
        let mut net = Network::<f64>::dense(&[6, 10, 2], Activation::Tanh, &mut SplitMix64::new(8))
            .map_err(|e| e.to_string())?;
        train(&mut net, &data, &cfg, |_| {}).map_err(|e| e.to_string())?;
        let dir = std::env::temp_dir().join(format!("odfa-check-{}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let path = dir.join("det.odfa");
        weights::write_weights(&net, &path).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let _ = std::fs::remove_file(&path);
        Ok(bytes)
    };
    let a = run()?;
    let b = run()?;
    if a != b {
        return Err("two identical runs produced different weight bytes".into());
    }
    Ok(())
}

pub struct EmbedCmd {
    pub weights: PathBuf,
    pub task: Task,
    pub layer: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub tsne_seed: u64,
    pub precision: Precision,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

pub fn cmd_embed(args: EmbedCmd) -> Result<()> {
    match args.precision {
        Precision::F32 => cmd_embed_typed::<f32>(args),
        Precision::F64 => cmd_embed_typed::<f64>(args),
    }
}

fn cmd_embed_typed<T: Element>(args: EmbedCmd) -> Result<()> {
    let data_dir = resolve_data_dir(args.data_dir.clone());
    let dataset = load_dataset::<T>(args.task, &data_dir)?;
    let file = weights::read_weights(&args.weights)?;
    let hidden_activation = match args.task {
        Task::Mnist => Activation::Tanh,
        Task::Cora => Activation::Relu,
    };
    let net: Network<T> = weights::network_from_weights(&file, hidden_activation)?;

    let data = dataset.labeled();
    if net.in_width() != data.n_features() || net.out_width() != data.n_classes() {
        bail!(
            "weights/dataset dimension mismatch: network is {}->{}, dataset is {} features -> {} classes",
            net.in_width(),
            net.out_width(),
            data.n_features(),
            data.n_classes()
        );
    }

    let hidden = extract_hidden(&net, &dataset, args.layer)?;
    let run = tsne(
        &hidden.to_f64(),
        args.perplexity,
        args.iterations,
        args.tsne_seed,
    )?;

    let labels: Vec<usize> = {
        let y = &data.y;
        (0..y.rows())
            .map(|i| {
                (0..y.cols())
                    .max_by(|&a, &b| y.get(i, a).partial_cmp(&y.get(i, b)).unwrap())
                    .unwrap()
            })
            .collect()
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let embed_path = args.out_dir.join("embedding.csv");
    export_embedding(&run, &labels, &embed_path)?;
    let kl_path = args.out_dir.join("kl_trace.txt");
    let kl_text: String = run.kl_trace.iter().map(|k| format!("{k}\n")).collect();
    std::fs::write(&kl_path, kl_text)?;
    println!(
        "embedding written to {} ({} points), KL trace to {}",
        embed_path.display(),
        run.points.rows(),
        kl_path.display()
    );
    Ok(())
}
