use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use siman_core::binarize::{
    brute_force_binarize, cosine, half_half_binarize, objective_value, optimal_binarize, quantization_error,
    sign_binarize_scaled, BinarizeError, WeightVector, BRUTE_FORCE_MAX_LEN,
};
use siman_core::bitkernel::{binary_dot, binary_matvec, BitVector, PackedMatrix};
use siman_core::data::{self, CsvWriter, DataError, Sample};
use siman_core::dist::{self, DistError, DistributionKind, DistributionModel};
use siman_core::nn::{self, EpochMetrics, NnError, TrainConfig, TrainMode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Binarize(#[from] BinarizeError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] NnError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("exactness check failed: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "siman", version, about = "Magnitude-based weight binarization experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binarize one weight vector and report code, objective and errors.
    Binarize(BinarizeArgs),
    /// Optimal threshold and +1 proportion under a weight distribution.
    Dist(DistArgs),
    /// Train ConvNet-S and export metrics, layer statistics and a checkpoint.
    Train(TrainArgs),
    /// Time the packed kernels after checking them against a float reference.
    KernelBench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BinarizeMode {
    Optimal,
    Half,
    Sign,
}

#[derive(Debug, Args, Serialize)]
struct BinarizeArgs {
    /// File of weights separated by whitespace or commas.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    input: Option<PathBuf>,
    /// Random vector as `n,dist,seed` with dist laplace or gauss.
    #[arg(long)]
    random: Option<String>,
    #[arg(long, value_enum, default_value = "optimal")]
    mode: BinarizeMode,
    /// Cross-check the optimal code against exhaustive search (n <= 20).
    #[arg(long)]
    oracle: bool,
    /// Also write the record here, with a manifest next to it.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DistArgs {
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Monte-Carlo check as `n,seed`.
    #[arg(long)]
    montecarlo: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Siman,
    Siman1,
    Siman2,
    Siman3,
    Sign,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Siman => TrainMode::Siman,
            ModeArg::Siman1 => TrainMode::Siman1,
            ModeArg::Siman2 => TrainMode::Siman2,
            ModeArg::Siman3 => TrainMode::Siman3,
            ModeArg::Sign => TrainMode::Sign,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// `cifar10:DIR[,train=N][,test=N]` or
    /// `synth:classes=4,dim=192,train=500,test=125,sep=12,seed=0` (per class).
    #[arg(long)]
    dataset: String,
    #[arg(long, value_enum, default_value = "siman")]
    mode: ModeArg,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// L2 coefficient; always used for float layers, and for binarized
    /// layers in the modes that keep it.
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    /// Random crop and flip (image datasets only).
    #[arg(long)]
    augment: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch progress on stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BenchOp {
    Dot,
    Matvec,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Comma-separated bit lengths.
    #[arg(long, default_value = "64,1024,4096")]
    n: String,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, value_enum, default_value = "dot")]
    op: BenchOp,
    /// Rows of the packed matrix for `matvec`.
    #[arg(long, default_value_t = 64)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Binarize(a) => cmd_binarize(&a),
        Command::Dist(a) => cmd_dist(&a),
        Command::Train(a) => cmd_train(&a),
        Command::KernelBench(a) => cmd_kernel_bench(&a),
    }
}

#[derive(Serialize)]
struct RunManifest<'a, A: Serialize> {
    subcommand: &'a str,
    args: &'a A,
    seed: Option<u64>,
    version: &'a str,
    outputs: Vec<String>,
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn write_manifest<A: Serialize>(subcommand: &str, args: &A, seed: Option<u64>, outputs: &[&Path]) -> Result<(), CliError> {
    let manifest = RunManifest {
        subcommand,
        args,
        seed,
        version: siman_core::VERSION,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    for out in outputs {
        let path = manifest_path(out);
        fs::write(&path, &text).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn parse_random_spec(spec: &str) -> Result<(usize, DistributionKind, u64), CliError> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [n, kind, seed] = parts[..] else {
        return Err(CliError::Usage(format!("--random expects n,dist,seed, got {spec:?}")));
    };
    let n = n.parse().map_err(|_| CliError::Usage(format!("bad length {n:?}")))?;
    let kind = kind.parse().map_err(CliError::Usage)?;
    let seed = seed.parse().map_err(|_| CliError::Usage(format!("bad seed {seed:?}")))?;
    Ok((n, kind, seed))
}

fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Usage(format!("{}: bad number {t:?}", path.display()))))
        .collect()
}

fn cmd_binarize(a: &BinarizeArgs) -> Result<(), CliError> {
    let (values, seed) = match (&a.input, &a.random) {
        (Some(p), None) => (read_vector(p)?, None),
        (None, Some(spec)) => {
            let (n, kind, seed) = parse_random_spec(spec)?;
            let model = DistributionModel::new(kind, 1.0)?;
            (dist::sample_weights(&model, n, seed)?.into_inner(), Some(seed))
        }
        _ => return Err(CliError::Usage("give exactly one of --input or --random".into())),
    };
    let w = WeightVector::new(values).map_err(|e| match e {
        BinarizeError::Empty | BinarizeError::NonFinite { .. } => CliError::Usage(e.to_string()),
        e => e.into(),
    })?;
    let abs: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    let mut record = serde_json::Map::new();
    record.insert("mode".into(), json!(a.mode));
    record.insert("n".into(), json!(w.len()));
    match a.mode {
        BinarizeMode::Optimal | BinarizeMode::Half => {
            let code = match a.mode {
                BinarizeMode::Optimal => optimal_binarize(&w)?,
                _ => half_half_binarize(&w),
            };
            let bits: Vec<f64> = code.bits().iter().map(|&b| b as f64).collect();
            record.insert("k".into(), json!(code.ones()));
            record.insert("code".into(), json!(code.to_string()));
            record.insert("objective".into(), json!(objective_value(&w, &code)?));
            record.insert("cosine".into(), json!(cosine(&w, &code.to_signs())));
            record.insert("quantization_error".into(), json!(quantization_error(&abs, &bits)?));
            if a.oracle {
                if w.len() > BRUTE_FORCE_MAX_LEN {
                    return Err(CliError::Usage(format!("--oracle needs n <= {BRUTE_FORCE_MAX_LEN}")));
                }
                let best = brute_force_binarize(&w)?;
                let diff = (objective_value(&w, &best)? - objective_value(&w, &code)?).abs();
                record.insert("oracle".into(), json!(if diff <= 1e-12 { "match" } else { "mismatch" }));
            }
        }
        BinarizeMode::Sign => {
            let s = sign_binarize_scaled(&w);
            let signs = s.to_f64();
            let code: String = s.bits.iter().map(|&b| if b > 0 { '1' } else { '0' }).collect();
            record.insert("k".into(), json!(s.bits.iter().filter(|&&b| b > 0).count()));
            record.insert("code".into(), json!(code));
            record.insert("scale".into(), json!(s.scale));
            record.insert("objective".into(), json!(cosine(&w, &signs)));
            record.insert("cosine".into(), json!(cosine(&w, &signs)));
            record.insert("quantization_error".into(), json!(quantization_error(&w, &signs)?));
        }
    }
    let line = serde_json::Value::Object(record).to_string() + "\n";
    print!("{line}");
    if let Some(out) = &a.output {
        write_file(out, line.as_bytes())?;
        write_manifest("binarize", a, seed, &[out])?;
    }
    Ok(())
}

fn parse_pair<A: std::str::FromStr, B: std::str::FromStr>(spec: &str, what: &str) -> Result<(A, B), CliError> {
    let (x, y) = spec.split_once(',').ok_or_else(|| CliError::Usage(format!("{what} expects two comma-separated values")))?;
    let x = x.trim().parse().map_err(|_| CliError::Usage(format!("{what}: bad value {x:?}")))?;
    let y = y.trim().parse().map_err(|_| CliError::Usage(format!("{what}: bad value {y:?}")))?;
    Ok((x, y))
}

fn cmd_dist(a: &DistArgs) -> Result<(), CliError> {
    let kind: DistributionKind = a.kind.parse().map_err(CliError::Usage)?;
    let model = DistributionModel::new(kind, a.scale).map_err(|e| CliError::Usage(e.to_string()))?;
    let r = dist::optimal_threshold(&model);
    let (empirical, seed) = match &a.montecarlo {
        Some(spec) => {
            let (n, seed): (usize, u64) = parse_pair(spec, "--montecarlo")?;
            if n == 0 {
                return Err(CliError::Usage("--montecarlo needs n >= 1".into()));
            }
            let w = dist::sample_weights(&model, n, seed)?;
            (format!("{:.6}", dist::empirical_plus_fraction(&w)?), Some(seed))
        }
        None => (String::new(), None),
    };
    let mut w = CsvWriter::new(Vec::new(), &["kind", "scale", "t_star", "p_plus", "empirical_p"]).expect("in-memory write");
    w.row(&[kind.name().into(), format!("{}", a.scale), format!("{:.6}", r.t_star), format!("{:.6}", r.p_plus), empirical])
        .expect("in-memory write");
    let bytes = w.into_inner();
    std::io::stdout().write_all(&bytes).map_err(io_err(Path::new("<stdout>")))?;
    if let Some(out) = &a.output {
        write_file(out, &bytes)?;
        write_manifest("dist", a, seed, &[out])?;
    }
    Ok(())
}

struct DatasetSplit {
    train: Vec<Sample>,
    test: Vec<Sample>,
    classes: usize,
    image: bool,
}

fn parse_kv(spec: &str) -> Result<Vec<(&str, &str)>, CliError> {
    spec.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.split_once('=').ok_or_else(|| CliError::Usage(format!("expected key=value, got {p:?}"))))
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Usage(format!("bad value for {key}: {v:?}")))
}

/// Builds train/test splits from a dataset spec (see `TrainArgs::dataset`).
fn load_dataset(spec: &str) -> Result<DatasetSplit, CliError> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        let (mut classes, mut dim, mut train, mut test, mut sep, mut seed) = (4usize, 192usize, 500usize, 125usize, 12.0f64, 0u64);
        for (k, v) in parse_kv(rest)? {
            match k {
                "classes" => classes = num(k, v)?,
                "dim" => dim = num(k, v)?,
                "train" => train = num(k, v)?,
                "test" => test = num(k, v)?,
                "sep" => sep = num(k, v)?,
                "seed" => seed = num(k, v)?,
                _ => return Err(CliError::Usage(format!("unknown synth key {k:?}"))),
            }
        }
        let all = data::synth_blobs(classes, dim, train + test, sep, seed).map_err(|e| CliError::Usage(e.to_string()))?;
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for chunk in all.chunks(train + test) {
            tr.extend_from_slice(&chunk[..train]);
            te.extend_from_slice(&chunk[train..]);
        }
        Ok(DatasetSplit { train: tr, test: te, classes, image: false })
    } else if let Some(rest) = spec.strip_prefix("cifar10:") {
        let mut parts = rest.splitn(2, ',');
        let dir = PathBuf::from(parts.next().unwrap_or_default());
        let (mut n_train, mut n_test) = (usize::MAX, usize::MAX);
        for (k, v) in parse_kv(parts.next().unwrap_or(""))? {
            match k {
                "train" => n_train = num(k, v)?,
                "test" => n_test = num(k, v)?,
                _ => return Err(CliError::Usage(format!("unknown cifar10 key {k:?}"))),
            }
        }
        let (mut train, mut test) = data::load_cifar10_splits(&dir)?;
        train.truncate(n_train);
        test.truncate(n_test);
        train.iter_mut().chain(test.iter_mut()).for_each(data::normalize_cifar);
        Ok(DatasetSplit { train, test, classes: data::CIFAR_CLASSES, image: true })
    } else {
        Err(CliError::Usage(format!("unknown dataset {spec:?}; use synth:... or cifar10:DIR")))
    }
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let split = load_dataset(&a.dataset)?;
    let mode = TrainMode::from(a.mode);
    let base = TrainConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        batch_size: a.batch_size,
        weight_decay_other: a.weight_decay,
        weight_decay_binarized: 0.0,
        seed: a.seed,
        augment: a.augment && split.image,
        ..TrainConfig::default()
    };
    let config = mode.configure(base, a.weight_decay);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let arch = nn::arch_for(&split.train, split.classes)?;
    let verbose = a.verbose;
    let mut outcome = nn::train(arch, &split.train, &split.test, &config, |m| {
        if verbose {
            eprintln!(
                "epoch {:>3} lr {:.5} loss {:.4} train {:.4} test {:.4} p+ {:.4}",
                m.epoch, m.lr, m.train_loss, m.train_acc, m.test_acc, m.mean_p_plus
            );
        }
    })?;
    outcome.state.meta = serde_json::to_string(&config).expect("config serializes");

    let metrics_path = a.out.join("metrics.csv");
    let mut w = CsvWriter::new(Vec::new(), &EpochMetrics::CSV_HEADER).expect("in-memory write");
    for m in &outcome.metrics {
        w.row(&m.csv_fields()).expect("in-memory write");
    }
    write_file(&metrics_path, &w.into_inner())?;

    let stats_path = a.out.join("layer_stats.csv");
    let mut w = CsvWriter::new(
        Vec::new(),
        &[
            "layer", "filters", "filter_len", "mean_p_plus", "cos_siman", "cos_siman_pm1", "cos_half", "cos_sign",
            "qe_siman", "qe_sign", "prefix_score",
        ],
    )
    .expect("in-memory write");
    for s in &outcome.layer_stats {
        w.row(&[
            s.layer.clone(),
            s.filters.to_string(),
            s.filter_len.to_string(),
            format!("{:.6}", s.mean_p_plus),
            format!("{:.6}", s.mean_cos_siman),
            format!("{:.6}", s.mean_cos_siman_pm1),
            format!("{:.6}", s.mean_cos_half),
            format!("{:.6}", s.mean_cos_sign),
            format!("{:.8}", s.mean_qe_siman),
            format!("{:.8}", s.mean_qe_sign),
            format!("{:.6}", s.mean_prefix_score),
        ])
        .expect("in-memory write");
    }
    write_file(&stats_path, &w.into_inner())?;

    let ckpt_path = a.out.join("checkpoint.simn");
    data::save_checkpoint(&outcome.state, &ckpt_path)?;
    write_manifest("train", a, Some(a.seed), &[&metrics_path, &stats_path, &ckpt_path])?;
    if let Some(last) = outcome.metrics.last() {
        println!("final test_acc {:.4} mean_p_plus {:.4}", last.test_acc, last.mean_p_plus);
    }
    Ok(())
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn float_dot(a: &[u8], b: &[u8]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (2.0 * x as f64 - 1.0) * (2.0 * y as f64 - 1.0)).sum()
}

fn cmd_kernel_bench(a: &BenchArgs) -> Result<(), CliError> {
    let sizes: Vec<usize> = a
        .n
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("bad size {s:?}"))))
        .collect::<Result<_, _>>()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Usage("sizes must be >= 1".into()));
    }
    if a.reps == 0 || a.rows == 0 {
        return Err(CliError::Usage("--reps and --rows must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut w = CsvWriter::new(Vec::new(), &["op", "n_or_shape", "reps", "rep", "ns_per_op", "exact"]).expect("in-memory write");
    for &n in &sizes {
        let (label, exact, mut timed): (String, bool, Box<dyn FnMut() -> i64>) = match a.op {
            BenchOp::Dot => {
                let (x, y) = (random_bits(&mut rng, n), random_bits(&mut rng, n));
                let (px, py) = (BitVector::pack(&x).expect("n >= 1"), BitVector::pack(&y).expect("n >= 1"));
                let exact = binary_dot(&px, &py).expect("equal lengths") as f64 == float_dot(&x, &y);
                (n.to_string(), exact, Box::new(move || binary_dot(&px, &py).expect("equal lengths")))
            }
            BenchOp::Matvec => {
                let rows: Vec<Vec<u8>> = (0..a.rows).map(|_| random_bits(&mut rng, n)).collect();
                let x = random_bits(&mut rng, n);
                let m = PackedMatrix::from_rows(&rows).expect("nonempty rows");
                let px = BitVector::pack(&x).expect("n >= 1");
                let betas = vec![1.0; a.rows];
                let out = binary_matvec(&m, &px, &betas).expect("shapes agree");
                let exact = rows.iter().zip(&out.raw).all(|(r, &v)| float_dot(r, &x) == v as f64);
                (
                    format!("{}x{}", a.rows, n),
                    exact,
                    Box::new(move || binary_matvec(&m, &px, &betas).expect("shapes agree").raw[0]),
                )
            }
        };
        if !exact {
            return Err(CliError::Mismatch(format!("{:?} at n = {n}", a.op)));
        }
        let inner = (1 << 20) / n.max(64) + 1;
        for rep in 0..a.reps {
            let start = Instant::now();
            let mut sink = 0i64;
            for _ in 0..inner {
                sink = sink.wrapping_add(std::hint::black_box(timed()));
            }
            std::hint::black_box(sink);
            let ns = start.elapsed().as_nanos() as f64 / inner as f64;
            let op = match a.op {
                BenchOp::Dot => "binary_dot",
                BenchOp::Matvec => "binary_matvec",
            };
            w.row(&[op.into(), label.clone(), a.reps.to_string(), rep.to_string(), format!("{ns:.2}"), "true".into()])
                .expect("in-memory write");
        }
    }
    let bytes = w.into_inner();
    std::io::stdout().write_all(&bytes).map_err(io_err(Path::new("<stdout>")))?;
    if let Some(out) = &a.output {
        write_file(out, &bytes)?;
        write_manifest("kernel-bench", a, Some(a.seed), &[out])?;
    }
    Ok(())
}
