use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dofs_core::criteria::{ScatterVariant, TestSign};
use dofs_core::data::{self, Dataset, LabelColumn};
use dofs_core::dpp::{self, Kernel, LEnsemble};
use dofs_core::elasticnet::ElasticNetConfig;
use dofs_core::evaluation::{self, compare_runs, EvalConfig, ResultRow, SelectionReport};
use dofs_core::pipeline::{Mode, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "dofs", version, about = "Streaming feature selection with DPP sampling")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Seed for every random choice.
    #[arg(long, default_value_t = 1, global = true)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the selection pipeline on one dataset and evaluate the result.
    Select(SelectArgs),
    /// Cross-validate a given feature subset.
    Evaluate(EvaluateArgs),
    /// Run several modes over every dataset in a manifest.
    Bench(BenchArgs),
    /// Draw subsets from a DPP built over a dataset or a kernel matrix.
    SampleDpp(SampleArgs),
    /// Write a labeled Gaussian fixture with informative and noise columns.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    dataset: PathBuf,
    /// Label column: a header name, a 0-based index, or "none".
    #[arg(long, default_value = "class")]
    label_column: String,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        data::load_csv(&self.dataset, &LabelColumn::parse(&self.label_column))
            .with_context(|| format!("loading {}", self.dataset.display()))
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum KernelArg {
    Rbf,
    Linear,
    Correlation,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    DppOnly,
    Unsupervised,
    Supervised,
    Combined,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DppOnly => Mode::DppOnly,
            ModeArg::Unsupervised => Mode::Unsupervised,
            ModeArg::Supervised => Mode::Supervised,
            ModeArg::Combined => Mode::Combined,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ScatterArg {
    Label,
    MeanVariance,
    Kernel,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SignArg {
    Exceeds,
    Literal,
}

#[derive(Args, Debug)]
struct KernelArgs {
    /// Similarity used for the DPP.
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    kernel: KernelArg,
    /// RBF width; defaults to 1 / number of instances.
    #[arg(long)]
    gamma: Option<f64>,
    /// Multiplier applied to the similarity matrix.
    #[arg(long, default_value_t = 1.0)]
    kernel_scale: f64,
}

impl KernelArgs {
    fn kernel(&self) -> Kernel {
        match self.kernel {
            KernelArg::Rbf => Kernel::Rbf { gamma: self.gamma },
            KernelArg::Linear => Kernel::Linear,
            KernelArg::Correlation => Kernel::Correlation,
        }
    }
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Selection mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Supervised)]
    mode: ModeArg,
    /// Features per arriving group.
    #[arg(long = "m", default_value_t = 5)]
    group_size: usize,
    /// Significance level of the local tests.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Minimum trace-ratio gain for supervised acceptance.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Elastic-net strength, also the pruning threshold.
    #[arg(long, default_value_t = 0.15)]
    lambda: f64,
    /// L1 share of the elastic-net penalty.
    #[arg(long, default_value_t = 0.5)]
    l1_ratio: f64,
    /// Pruning threshold if it should differ from --lambda.
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Largest number of features sampled from one group.
    #[arg(long)]
    k_max: Option<usize>,
    /// Class-separability construction for the supervised tests.
    #[arg(long, value_enum, default_value_t = ScatterArg::Label)]
    scatter: ScatterArg,
    /// Direction of the score t-test.
    #[arg(long, value_enum, default_value_t = SignArg::Exceeds)]
    t_sign: SignArg,
    /// Shuffle the feature order before grouping.
    #[arg(long)]
    shuffle: bool,
    /// Stop once this many features are selected.
    #[arg(long)]
    max_selected: Option<usize>,
    /// Largest number of selected features the sampler conditions on.
    #[arg(long, default_value_t = 500)]
    anchor_limit: usize,
    /// Prune after every accepted feature instead of once per group.
    #[arg(long)]
    global_per_feature: bool,
}

impl PipelineArgs {
    fn config(&self, seed: u64) -> PipelineConfig {
        self.config_for(self.mode.into(), seed)
    }

    fn config_for(&self, mode: Mode, seed: u64) -> PipelineConfig {
        PipelineConfig {
            mode,
            kernel: self.kernel.kernel(),
            kernel_scale: self.kernel.kernel_scale,
            k_max: self.k_max,
            alpha: self.alpha,
            epsilon: self.epsilon,
            scatter: match self.scatter {
                ScatterArg::Label => ScatterVariant::Label,
                ScatterArg::MeanVariance => ScatterVariant::MeanVariance,
                ScatterArg::Kernel => ScatterVariant::Kernel,
            },
            test_sign: match self.t_sign {
                SignArg::Exceeds => TestSign::Exceeds,
                SignArg::Literal => TestSign::Literal,
            },
            elasticnet: ElasticNetConfig {
                lambda: self.lambda,
                l1_ratio: self.l1_ratio,
                prune_threshold: self.prune_threshold,
                ..Default::default()
            },
            group_size: self.group_size,
            seed,
            shuffle: self.shuffle,
            max_selected: self.max_selected,
            anchor_limit: self.anchor_limit,
            global_per_feature: self.global_per_feature,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Repeat selection inside every training fold.
    #[arg(long)]
    select_per_fold: bool,
}

impl EvalArgs {
    fn config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            folds: self.folds,
            seed,
            select_per_fold: self.select_per_fold,
            ..Default::default()
        }
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Directory for reports, logs and result tables.
    #[arg(long, env = "DOFS_OUTPUT_DIR", default_value = "dofs-out")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    out: OutputArgs,
    /// Also write the per-group iteration log (JSON lines).
    #[arg(long)]
    log: bool,
    /// Also write the final pipeline state as a checkpoint.
    #[arg(long)]
    checkpoint: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated 0-based feature indices; all features when omitted.
    #[arg(long, value_delimiter = ',')]
    features: Vec<usize>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Manifest: one "path label-column" pair per line, paths relative to it.
    #[arg(long)]
    manifest: PathBuf,
    /// Modes to run for every dataset.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "dpp-only,unsupervised,supervised")]
    modes: Vec<ModeArg>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Dataset whose feature similarities define the kernel.
    #[arg(long, conflicts_with = "kernel_matrix", required_unless_present = "kernel_matrix")]
    dataset: Option<PathBuf>,
    /// Label column of --dataset; it is excluded from the features.
    #[arg(long, default_value = "class")]
    label_column: String,
    /// Headerless CSV holding the L matrix directly.
    #[arg(long)]
    kernel_matrix: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Number of draws.
    #[arg(long, default_value_t = 10)]
    n_samples: usize,
    /// Cap on the subset size.
    #[arg(long)]
    k_max: Option<usize>,
    /// Write the L and K matrices as CSV into this directory.
    #[arg(long)]
    dump_kernels: Option<PathBuf>,
    /// Print only subset frequencies instead of every draw.
    #[arg(long)]
    summary: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Instances.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Label-dependent columns (placed first).
    #[arg(long, default_value_t = 5)]
    informative: usize,
    /// Label-independent columns.
    #[arg(long, default_value_t = 95)]
    noise: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn report_stem(r: &SelectionReport) -> String {
    format!("{}_{}_seed{}", r.dataset, r.mode, r.seed)
}

fn cmd_select(a: &SelectArgs, seed: u64) -> Result<()> {
    let d = a.data.load()?;
    let pcfg = a.pipeline.config(seed);
    let ecfg = a.eval.config(seed);
    let (state, report) = evaluation::select_and_evaluate(&d, &pcfg, &ecfg)?;
    fs::create_dir_all(&a.out.output)
        .with_context(|| format!("creating {}", a.out.output.display()))?;
    let stem = report_stem(&report);
    report.write_json(a.out.output.join(format!("{stem}.json")))?;
    let list: String = report
        .selected
        .iter()
        .zip(&report.feature_names)
        .map(|(i, n)| format!("{i}\t{n}\n"))
        .collect();
    fs::write(a.out.output.join(format!("{stem}_selected.txt")), list)?;
    if a.log {
        state.write_log(a.out.output.join(format!("{stem}_log.jsonl")))?;
    }
    if a.checkpoint {
        state.save(a.out.output.join(format!("{stem}_state.json")))?;
    }
    println!(
        "{} {}: {} of {} features, accuracy {:.2} (3-NN {:.2}), log-loss {:.4}",
        report.dataset,
        report.mode,
        report.n_selected,
        d.n_features(),
        report.accuracy,
        report.knn_accuracy,
        report.log_loss
    );
    println!("selected: {:?}", report.selected);
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, seed: u64) -> Result<()> {
    let d = a.data.load()?;
    let features: Vec<usize> = if a.features.is_empty() {
        (0..d.n_features()).collect()
    } else {
        a.features.clone()
    };
    let e = evaluation::evaluate(&d, &features, &a.eval.config(seed))?;
    println!("{}", serde_json::to_string_pretty(&e)?);
    Ok(())
}

/// Parses a manifest into (dataset path, label column) pairs.
fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let file = parts.next().expect("nonempty line");
        let label = parts.next().unwrap_or("class").to_string();
        if parts.next().is_some() {
            bail!("{}:{}: expected \"path label-column\"", path.display(), no + 1);
        }
        out.push((base.join(file), label));
    }
    Ok(out)
}

/// Returns true when every grid cell succeeded.
fn cmd_bench(a: &BenchArgs, seed: u64) -> Result<bool> {
    let entries = read_manifest(&a.manifest)?;
    fs::create_dir_all(&a.out.output)
        .with_context(|| format!("creating {}", a.out.output.display()))?;
    let ecfg = a.eval.config(seed);
    let mut reports = Vec::new();
    let mut ok = true;
    for (path, label) in &entries {
        let d = match data::load_csv(path, &LabelColumn::parse(label)) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("{}: FAILED to load: {e}", path.display());
                ok = false;
                continue;
            }
        };
        for &m in &a.modes {
            let pcfg = a.pipeline.config_for(m.into(), seed);
            match evaluation::select_and_evaluate(&d, &pcfg, &ecfg) {
                Ok((_, r)) => {
                    eprintln!(
                        "{} {}: ok ({} features, {:.2}%, {:.1}s)",
                        r.dataset, r.mode, r.n_selected, r.accuracy, r.seconds
                    );
                    r.write_json(a.out.output.join(format!("{}.json", report_stem(&r))))?;
                    reports.push(r);
                }
                Err(e) => {
                    eprintln!("{} {}: FAILED: {e}", d.name(), Mode::from(m).as_str());
                    ok = false;
                }
            }
        }
    }
    let rows: Vec<ResultRow> = reports.iter().map(ResultRow::from).collect();
    evaluation::upsert_results(a.out.output.join("results.csv"), &rows)?;
    if !reports.is_empty() {
        let table = compare_runs(&reports);
        fs::write(a.out.output.join("comparison.csv"), table.to_csv())?;
        print!("{}", table.to_text());
    }
    Ok(ok)
}

fn cmd_sample(a: &SampleArgs, seed: u64) -> Result<()> {
    let ens = match (&a.kernel_matrix, &a.dataset) {
        (Some(p), _) => {
            let m = dpp::read_matrix_csv(p)?;
            LEnsemble::from_matrix(m * a.kernel.kernel_scale)?
        }
        (None, Some(p)) => {
            let d = data::load_csv(p, &LabelColumn::parse(&a.label_column))
                .with_context(|| format!("loading {}", p.display()))?;
            let ids: Vec<usize> = (0..d.n_features()).collect();
            let base = dpp::build_similarity(d.values(), a.kernel.kernel(), ids)?;
            LEnsemble::new(base.matrix() * a.kernel.kernel_scale, base.item_ids().to_vec())?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(dir) = &a.dump_kernels {
        fs::create_dir_all(dir)?;
        dpp::write_matrix_csv(dir.join("l_kernel.csv"), ens.matrix())?;
        dpp::write_matrix_csv(dir.join("k_kernel.csv"), &dpp::marginal_kernel(&ens).matrix)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if a.summary {
        let mut counts: std::collections::BTreeMap<Vec<usize>, usize> = Default::default();
        let mut sampler = ens.sampler();
        for _ in 0..a.n_samples {
            let items = match a.k_max {
                Some(k) => dpp::sample_truncated(&ens, k, &mut rng).items,
                None => sampler.draw(&mut rng),
            };
            *counts.entry(items).or_default() += 1;
        }
        for (items, c) in counts {
            let p = dpp::subset_log_prob(&ens, &items)?.exp();
            writeln!(out, "{:?}\t{}\t{:.6}\t{:.6}", items, c, c as f64 / a.n_samples as f64, p)?;
        }
        return Ok(());
    }
    for _ in 0..a.n_samples {
        let s = match a.k_max {
            Some(k) => dpp::sample_truncated(&ens, k, &mut rng),
            None => dpp::sample(&ens, &mut rng),
        };
        writeln!(out, "{:.6}\t{:?}", s.log_prob, s.items)?;
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let d = data::make_synthetic(a.n, a.informative, a.noise, seed)?;
    d.write_csv(&a.out, "class")?;
    println!(
        "wrote {} ({} x {}, informative columns 0..{})",
        a.out.display(),
        d.n_instances(),
        d.n_features(),
        a.informative
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Select(a) => cmd_select(a, cli.seed),
        Command::Evaluate(a) => cmd_evaluate(a, cli.seed),
        Command::Bench(a) => match cmd_bench(a, cli.seed) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("some bench cells failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
        Command::SampleDpp(a) => cmd_sample(a, cli.seed),
        Command::Synth(a) => cmd_synth(a, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
