use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use antkit::arch::{parse_spec, NetworkSpec, StageOp};
use antkit::costmodel::{compare, network_cost, Conventions, CIFAR_LITERATURE, IMAGENET_LITERATURE};
use antkit::fcrf::{check_network, describe as describe_fcrf, network_matrix};
use antkit::harness::data::Split;
use antkit::harness::{
    gradcheck_network, load_cifar_binary, save_checkpoint, synth_dataset, train, Augment, GradcheckConfig, SynthSpec, TrainConfig,
};
use antkit::network::build_network;
use antkit::{Error, Tensor};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DATA_ENV: &str = "ANTKIT_DATA_DIR";
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "antkit", version, about = "ANTNet architecture toolkit: costs, channel coverage, gradient checks, training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostFormat {
    Text,
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Literature {
    Imagenet,
    Cifar,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Layer-by-layer table of a network spec.
    Describe { spec: PathBuf },
    /// Parameter and multiply-add report.
    Cost {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: CostFormat,
        /// Comma-separated switches: no-bn, no-attention, no-attention-bias, shared-branches.
        #[arg(long, default_value = "")]
        conventions: String,
    },
    /// Side-by-side budgets of several specs and published baselines.
    Compare {
        #[arg(required = true)]
        specs: Vec<PathBuf>,
        /// Spec name every delta is measured against.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, value_enum, default_value = "none")]
        literature: Literature,
        #[arg(long, default_value = "")]
        conventions: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Full channel receptive field check; exit 1 with a witness when it fails.
    Fcrf {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Write the end-to-end dependency matrix as a 0/1 grid.
        #[arg(long)]
        dump_matrix: Option<PathBuf>,
    },
    /// Central-difference gradient check; exit 0 iff max relative error < 1e-4.
    Gradcheck {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
    },
    /// Train on the synthetic set or CIFAR-100 binaries.
    Train(TrainArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    spec: PathBuf,
    /// Use the synthetic grating set instead of CIFAR-100.
    #[arg(long)]
    synth: bool,
    #[arg(long, default_value_t = 32)]
    synth_per_class: usize,
    #[arg(long, default_value_t = 0.2)]
    synth_noise: f64,
    /// Directory holding train.bin and test.bin; defaults to $ANTKIT_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    max_items: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 4e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, value_delimiter = ',', default_value = "200,300")]
    milestones: Vec<usize>,
    #[arg(long)]
    no_nesterov: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit 1 unless the final train accuracy reaches this value (0.95 with --synth).
    #[arg(long)]
    target_acc: Option<f64>,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Exit status with its diagnostic.
enum Failure {
    /// Bad input or usage.
    Usage(String),
    /// A check ran and failed.
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) | Error::DegenerateBatch(_) | Error::Analysis(_) => Failure::Verify(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<String, Failure>;

fn load_spec(path: &Path) -> Result<NetworkSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn conventions(spec: Option<&NetworkSpec>, list: &str) -> Result<Conventions, Failure> {
    let base = spec.map(Conventions::for_spec).unwrap_or_default();
    Ok(base.parse_switches(list)?)
}

fn cmd_describe(path: &Path) -> Outcome {
    let spec = load_spec(path)?;
    let plan = spec.resolve()?;
    let mut out = String::new();
    let _ = writeln!(out, "{} (input {:?}, {} classes, alpha {})", spec.name, spec.input_shape, spec.num_classes, spec.alpha);
    let _ = writeln!(
        out,
        "{:<8} {:<18} {:>12} {:>12} {:>3} {:>3} {:>3} {:>3} {:>3}  placement",
        "stage", "op", "in", "out", "t", "r", "g", "n", "s"
    );
    for st in &plan.stages {
        let s = &st.stage;
        let shape = |c: usize, hw: (usize, usize)| format!("{c}x{}x{}", hw.0, hw.1);
        let block = s.op.is_block();
        let g = if s.op == StageOp::EAntblock {
            s.branch_groups.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
        } else {
            s.g.to_string()
        };
        let dash = |v: String| if block { v } else { "-".into() };
        let _ = writeln!(
            out,
            "{:<8} {:<18} {:>12} {:>12} {:>3} {:>3} {:>3} {:>3} {:>3}  {}",
            s.name,
            s.op.as_str(),
            shape(st.in_channels, st.in_hw),
            shape(st.out_channels, st.out_hw),
            dash(s.t.to_string()),
            dash(s.r.to_string()),
            dash(g),
            s.n,
            s.s,
            if block { s.placement.as_str() } else { "-" }
        );
    }
    Ok(out)
}

fn cmd_cost(path: &Path, format: CostFormat, switches: &str) -> Outcome {
    let spec = load_spec(path)?;
    let report = network_cost(&spec, conventions(Some(&spec), switches)?)?;
    Ok(match format {
        CostFormat::Text => report.to_text(),
        CostFormat::Csv => report.to_csv(),
        CostFormat::Json => report.to_json() + "\n",
    })
}

fn cmd_compare(paths: &[PathBuf], baseline: Option<&str>, lit: Literature, switches: &str, format: Format) -> Outcome {
    let mut reports = Vec::new();
    for p in paths {
        let spec = load_spec(p)?;
        reports.push(network_cost(&spec, conventions(Some(&spec), switches)?)?);
    }
    let fixtures = match lit {
        Literature::Imagenet => IMAGENET_LITERATURE,
        Literature::Cifar => CIFAR_LITERATURE,
        Literature::None => &[],
    };
    if let Some(b) = baseline {
        if !reports.iter().any(|r| r.name == b) && !fixtures.iter().any(|f| f.model == b) {
            return Err(Failure::Usage(format!("baseline '{b}' is not among the compared models")));
        }
    }
    let c = compare(&reports, fixtures, baseline);
    Ok(match format {
        Format::Text => c.to_text(),
        Format::Json => c.to_json() + "\n",
    })
}

fn cmd_fcrf(path: &Path, format: Format, dump: Option<&Path>) -> Outcome {
    let spec = load_spec(path)?;
    let verdict = check_network(&spec)?;
    if let Some(d) = dump {
        let grid = network_matrix(&spec)?.to_grid();
        std::fs::write(d, grid).map_err(|e| Failure::Usage(format!("{}: {e}", d.display())))?;
    }
    let body = match format {
        Format::Json => verdict.to_json() + "\n",
        Format::Text => describe_fcrf(&verdict),
    };
    if verdict.fcrf {
        Ok(body)
    } else {
        print!("{body}");
        let (o, i) = verdict.witness.unwrap_or_default();
        let block = verdict.witness_block.as_deref().unwrap_or("network");
        Err(Failure::Verify(format!("no full channel receptive field: {block} output {o} never sees input {i}")))
    }
}

fn cmd_gradcheck(path: &Path, seed: u64, eps: f64, samples: usize, batch: usize) -> Outcome {
    let spec = load_spec(path)?;
    if !(eps > 0.0 && eps.is_finite()) || batch < 2 {
        return Err(Failure::Usage("--eps must be positive and --batch at least 2".into()));
    }
    let mut net = build_network(&spec, seed)?;
    let [c, h, w] = spec.input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let x = Tensor::from_fn(&[batch, c, h, w], |_| rng.random_range(-1.0..1.0));
    let r = gradcheck_network(&mut net, &x, GradcheckConfig { eps, samples, seed })?;
    let line = format!(
        "max_rel_err={:.3e} worst_param={}[{}] checked={} skipped={} lambdas={}\n",
        r.max_rel_err, r.worst_param, r.worst_index, r.checked, r.skipped, r.lambdas_checked
    );
    if r.max_rel_err < GRADCHECK_TOL {
        Ok(line)
    } else {
        print!("{line}");
        Err(Failure::Verify(format!("max relative error {:.3e} ≥ {GRADCHECK_TOL:e}", r.max_rel_err)))
    }
}

fn cmd_train(a: &TrainArgs) -> Outcome {
    let spec = load_spec(&a.spec)?;
    let [c, h, w] = spec.input_shape;
    let (train_set, eval_set, augment) = if a.synth {
        if h != w || c != 3 {
            return Err(Failure::Usage(format!("synthetic images are 3xSxS, spec wants {c}x{h}x{w}")));
        }
        let synth = |seed| SynthSpec { classes: spec.num_classes, n_per_class: a.synth_per_class, size: h, noise: a.synth_noise, seed };
        (synth_dataset(synth(a.seed))?, synth_dataset(synth(a.seed.wrapping_add(1)))?, None)
    } else {
        let dir = a
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .ok_or_else(|| Failure::Usage(format!("no data: pass --synth, --data-dir or set {DATA_ENV}")))?;
        let train_set = load_cifar_binary(&dir.join("train.bin"), a.max_items, Split::Train)?;
        let test_set = load_cifar_binary(&dir.join("test.bin"), a.max_items, Split::Test)?;
        if [c, h, w] != [3, 32, 32] || spec.num_classes != 100 {
            return Err(Failure::Usage("CIFAR-100 training needs a 3x32x32 input, 100-class spec".into()));
        }
        let mean = train_set.channel_means();
        let aug = (!a.no_augment).then(|| Augment::cifar(mean.clone()));
        // Evaluation images get the same mean subtraction without the random parts.
        let mut test_set = test_set;
        let per = 32 * 32;
        for (k, v) in test_set.images.data_mut().iter_mut().enumerate() {
            *v -= mean[(k / per) % 3];
        }
        let mut train_set = train_set;
        if aug.is_none() {
            for (k, v) in train_set.images.data_mut().iter_mut().enumerate() {
                *v -= mean[(k / per) % 3];
            }
        }
        (train_set, test_set, aug)
    };
    let cfg = TrainConfig {
        momentum: a.momentum,
        nesterov: !a.no_nesterov,
        weight_decay: a.weight_decay,
        lr_init: a.lr,
        lr_gamma: a.gamma,
        milestones: a.milestones.clone(),
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let mut net = build_network(&spec, a.seed)?;
    let history = train(&mut net, &train_set, Some(&eval_set), &cfg, augment.as_ref())?;
    let csv = history.to_csv();
    if let Some(p) = &a.history {
        std::fs::write(p, &csv).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &a.checkpoint {
        save_checkpoint(p, &net)?;
    }
    let out = if a.history.is_some() { String::new() } else { csv };
    let target = a.target_acc.or(a.synth.then_some(0.95));
    let reached = history.last().map_or(0.0, |r| r.train_acc);
    match target {
        Some(t) if reached < t => {
            print!("{out}");
            Err(Failure::Verify(format!("train accuracy {reached:.4} below target {t}")))
        }
        _ => {
            eprintln!("final train accuracy {reached:.4}");
            Ok(out)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Describe { spec } => cmd_describe(spec),
        Command::Cost { spec, format, conventions } => cmd_cost(spec, *format, conventions),
        Command::Compare { specs, baseline, literature, conventions, format } => {
            cmd_compare(specs, baseline.as_deref(), *literature, conventions, *format)
        }
        Command::Fcrf { spec, format, dump_matrix } => cmd_fcrf(spec, *format, dump_matrix.as_deref()),
        Command::Gradcheck { spec, seed, eps, samples, batch } => cmd_gradcheck(spec, *seed, *eps, *samples, *batch),
        Command::Train(args) => cmd_train(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("antkit: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("antkit: {msg}");
            ExitCode::from(2)
        }
    }
}
