//! The `ntk-attn` command line.
//!
//! Every subcommand accepts `--seed`, `--out` and `--config`. A config file
//! is a JSON object whose keys are flag names (`g_max` or `g-max`); flags
//! given on the command line take precedence over it. Each run writes
//! `run.json` with the fully resolved arguments into the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ntk_attn_core::feature_map::{FeatureKind, FeatureMapSpec, ScaleMode};
use ntk_attn_core::gradcheck::run_all_checks;
use ntk_attn_core::ntk_attention::ntk_attention_forward;
use ntk_attn_core::stylized::{
    drift_displacement_ratio, gd_train, kernel_gram, stylized_loss, Dataset, Diagnostics, EtaMode, StylizedModel, TargetKind, TrainConfig,
    TrainError, TrainReport,
};
use ntk_attn_core::{
    compress_prefix, count_params, min_eigen_sym, prefix_attention, prefix_attention_decomposed, DenseMatrix, NtkAttnModel,
    ParamKind, PrefixModel, SeededRng,
};
use serde::Serialize;
use serde_json::Value;

use crate::bench::{self, Algo, BenchConfig};
use crate::error::IoError;
use crate::experiments::{approx_csv, approx_error_sweep, ApproxConfig};
use crate::{manifest, mtxt};

#[derive(Debug, Parser)]
#[command(name = "ntk-attn", version, about = "Prefix attention, NTK-Attention and stylized NTK experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    /// Root of every random stream in the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// JSON file of flag values; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct FeatureFlags {
    /// first_order, taylor or taylor_compact.
    #[arg(long, default_value = "first_order")]
    feature_map: String,
    /// Taylor order.
    #[arg(long, default_value_t = 2)]
    g: usize,
    /// inv_sqrt_d or inv_d.
    #[arg(long, default_value = "inv_sqrt_d")]
    scale_mode: String,
}

impl FeatureFlags {
    fn spec(&self, d: usize) -> Result<FeatureMapSpec, CliError> {
        let kind: FeatureKind = self.feature_map.parse().map_err(|e: ntk_attn_core::Error| CliError::Usage(e.to_string()))?;
        let mode: ScaleMode = self.scale_mode.parse().map_err(|e: ntk_attn_core::Error| CliError::Usage(e.to_string()))?;
        Ok(match kind {
            FeatureKind::FirstOrder => FeatureMapSpec::first_order(d),
            FeatureKind::Taylor => FeatureMapSpec::taylor(d, self.g, mode),
            FeatureKind::TaylorCompact => FeatureMapSpec::taylor_compact(d, self.g, mode),
        })
    }
}

/// Shape of a randomly generated prefix model, used when no manifest is given.
#[derive(Debug, Clone, Args, Serialize)]
struct InitFlags {
    #[arg(long, default_value_t = 32)]
    init_d: usize,
    #[arg(long, default_value_t = 1024)]
    init_m: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct InputFlags {
    /// Input matrix `X` (`L × d`, mtxt); random when absent.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Rows of the random input.
    #[arg(long, default_value_t = 16)]
    l: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct StylizedFlags {
    /// Dataset manifest; generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Stylized model manifest; initialized when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 2048)]
    m: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// symmetric_affine or random_unit.
    #[arg(long, default_value = "symmetric_affine")]
    targets: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress a prefix into the (Z, k) pair and report parameter counts.
    Compress {
        #[command(flatten)]
        common: Common,
        /// Prefix model manifest; random when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        init: InitFlags,
        #[command(flatten)]
        features: FeatureFlags,
    },
    /// Exact prefix attention.
    Attn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        init: InitFlags,
        #[command(flatten)]
        input: InputFlags,
        /// Use the split input/prefix evaluation.
        #[arg(long)]
        decomposed: bool,
    },
    /// NTK-Attention forward pass.
    NtkAttn {
        #[command(flatten)]
        common: Common,
        /// NTK-Attention manifest; when absent a random prefix model is compressed.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        init: InitFlags,
        #[command(flatten)]
        input: InputFlags,
        #[command(flatten)]
        features: FeatureFlags,
    },
    /// Truncation error of Taylor feature maps against exact prefix attention.
    ApproxError {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        l: usize,
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        g_min: usize,
        #[arg(long, default_value_t = 10)]
        g_max: usize,
        #[arg(long, default_value_t = 0.5)]
        bound: f64,
        /// taylor or taylor_compact.
        #[arg(long, default_value = "taylor_compact")]
        kind: String,
        #[arg(long, default_value = "inv_sqrt_d")]
        scale_mode: String,
    },
    /// Full-batch gradient descent on the stylized model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stylized: StylizedFlags,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        /// Fixed learning rate; chosen automatically when absent.
        #[arg(long)]
        eta: Option<f64>,
        /// Record kernel drift every this many steps.
        #[arg(long)]
        drift_every: Option<usize>,
        /// Report the smallest eigenvalue of the initial kernel.
        #[arg(long)]
        lambda_min: bool,
    },
    /// The neural tangent kernel of the stylized model.
    Kernel {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stylized: StylizedFlags,
        /// Largest admissible n·d.
        #[arg(long, default_value_t = 512)]
        cap: usize,
    },
    /// Certify analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Time prefix attention and NTK-Attention across prefix lengths.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 32)]
        d: usize,
        /// Input lengths.
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
        l: Vec<usize>,
        /// Smallest prefix length is 2^m_min_exp.
        #[arg(long, default_value_t = 0)]
        m_min_exp: u32,
        /// Largest prefix length is 2^m_max_exp.
        #[arg(long, default_value_t = 16)]
        m_max_exp: u32,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Algorithms to time.
        #[arg(long, value_delimiter = ',', default_value = "prefix,ntk")]
        algo: Vec<Algo>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Core(#[from] ntk_attn_core::Error),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(IoError::Parse { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Core(e) => CliError::Core(e),
            TrainError::Diverged { step, .. } => CliError::Check(format!("training diverged at step {step}")),
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse_with_config(&args) {
        Ok(cli) => cli,
        Err(Parsed::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(Parsed::Config(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

enum Parsed {
    Clap(clap::Error),
    Config(CliError),
}

fn parse_with_config(args: &[OsString]) -> Result<Cli, Parsed> {
    let first = Cli::try_parse_from(args).map_err(Parsed::Clap)?;
    let Some(config) = common(&first.command).config.clone() else {
        return Ok(first);
    };
    let extra = config_args(&config, args).map_err(Parsed::Config)?;
    // program name and subcommand first, then config values, then the user's flags
    let mut merged: Vec<OsString> = args[..2].to_vec();
    merged.extend(extra.into_iter().map(OsString::from));
    merged.extend(args[2..].iter().cloned());
    Cli::try_parse_from(merged).map_err(Parsed::Clap)
}

/// Flags derived from the config file, skipping any flag already on the command line.
fn config_args(path: &Path, given: &[OsString]) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| IoError::json(path, e))?;
    let Value::Object(map) = value else {
        return Err(IoError::Parse { file: path.to_path_buf(), line: 1, msg: "config must be a JSON object".into() }.into());
    };
    let given: Vec<String> = given.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut out = Vec::new();
    for (key, val) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || given.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let rendered = match val {
            Value::Null => continue,
            Value::Bool(true) => {
                out.push(flag);
                continue;
            }
            Value::Bool(false) => continue,
            Value::Number(n) => n.to_string(),
            Value::String(s) => s,
            Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(_) => {
                return Err(CliError::Usage(format!("config key {key:?} holds an object")));
            }
        };
        out.push(format!("{flag}={rendered}"));
    }
    Ok(out)
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Compress { common, .. }
        | Command::Attn { common, .. }
        | Command::NtkAttn { common, .. }
        | Command::ApproxError { common, .. }
        | Command::Train { common, .. }
        | Command::Kernel { common, .. }
        | Command::Gradcheck { common }
        | Command::Bench { common, .. } => common,
    }
}

fn prepare_out(common: &Common, name: &str, args: Value) -> Result<(), CliError> {
    fs::create_dir_all(&common.out).map_err(|e| IoError::Io { path: common.out.clone(), source: e })?;
    let record = serde_json::json!({
        "command": name,
        "seed": common.seed,
        "out": common.out,
        "config": common.config,
        "args": args,
    });
    write_text(&common.out.join("run.json"), &(serde_json::to_string_pretty(&record).expect("json") + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e }.into())
}

/// Random prefix model: projections `N(0, 1/d)`, prefix entries uniform in `[−1, 1]`.
fn random_prefix_model(seed: u64, init: &InitFlags) -> Result<PrefixModel, CliError> {
    let mut rng = SeededRng::derived(seed, "model");
    let d = init.init_d;
    if d == 0 {
        return Err(CliError::Usage("--init-d must be positive".into()));
    }
    let s = 1.0 / (d as f64).sqrt();
    Ok(PrefixModel::new(
        rng.gaussian_matrix(d, d, s)?,
        rng.gaussian_matrix(d, d, s)?,
        rng.gaussian_matrix(d, d, s)?,
        rng.uniform_matrix(init.init_m, d, 1.0),
    )?)
}

fn load_or_init_prefix(common: &Common, model: &Option<PathBuf>, init: &InitFlags) -> Result<PrefixModel, CliError> {
    match model {
        Some(path) => Ok(manifest::load_prefix_model(path)?),
        None => {
            let model = random_prefix_model(common.seed, init)?;
            manifest::save_prefix_model(&common.out, "prefix", &model)?;
            Ok(model)
        }
    }
}

fn load_or_random_input(common: &Common, input: &InputFlags, d: usize) -> Result<DenseMatrix, CliError> {
    match &input.x {
        Some(path) => Ok(mtxt::read(path)?),
        None => {
            let x = SeededRng::derived(common.seed, "input").uniform_matrix(input.l, d, 1.0);
            mtxt::write(&common.out.join("x.mtxt"), &x)?;
            Ok(x)
        }
    }
}

fn stylized_setup(common: &Common, flags: &StylizedFlags) -> Result<(StylizedModel, Dataset), CliError> {
    let targets = match flags.targets.as_str() {
        "symmetric_affine" => TargetKind::SymmetricAffine,
        "random_unit" => TargetKind::RandomUnit,
        other => return Err(CliError::Usage(format!("unknown target kind {other:?}"))),
    };
    let data = match &flags.data {
        Some(path) => manifest::load_dataset(path)?,
        None => {
            let data = Dataset::generate(flags.n, flags.d, targets, &mut SeededRng::derived(common.seed, "data"))?;
            manifest::save_dataset(&common.out, "data", &data)?;
            data
        }
    };
    let model = match &flags.model {
        Some(path) => manifest::load_stylized_model(path)?,
        None => {
            let mut rng = SeededRng::derived(common.seed, "model");
            let model = StylizedModel::init(data.d(), flags.m, flags.sigma, &mut rng)?;
            manifest::save_stylized_model(&common.out, "model_init", &model)?;
            model
        }
    };
    Ok((model, data))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Compress { common, model, init, features } => {
            let args = serde_json::json!({ "model": model, "init": init, "features": features });
            prepare_out(&common, "compress", args)?;
            let prefix = load_or_init_prefix(&common, &model, &init)?;
            let spec = features.spec(prefix.d())?;
            let compressed = compress_prefix(&prefix, &spec)?;
            manifest::save_ntk_model(&common.out, "ntk", &compressed)?;
            let before = count_params(ParamKind::Prefix, prefix.m(), prefix.d(), 0);
            let after = count_params(ParamKind::Ntk, prefix.m(), prefix.d(), compressed.r());
            println!("d = {}, m = {}, r = {}", prefix.d(), prefix.m(), compressed.r());
            println!("parameters: {before} -> {after}");
            Ok(())
        }
        Command::Attn { common, model, init, input, decomposed } => {
            let args = serde_json::json!({ "model": model, "init": init, "input": input, "decomposed": decomposed });
            prepare_out(&common, "attn", args)?;
            let prefix = load_or_init_prefix(&common, &model, &init)?;
            let x = load_or_random_input(&common, &input, prefix.d())?;
            let out = if decomposed { prefix_attention_decomposed(&prefix, &x)? } else { prefix_attention(&prefix, &x)? };
            mtxt::write(&common.out.join("attn.mtxt"), &out)?;
            println!("wrote {}x{} output", out.rows(), out.cols());
            Ok(())
        }
        Command::NtkAttn { common, model, init, input, features } => {
            let args = serde_json::json!({ "model": model, "init": init, "input": input, "features": features });
            prepare_out(&common, "ntk-attn", args)?;
            let (ntk, reference): (NtkAttnModel, Option<PrefixModel>) = match &model {
                Some(path) => (manifest::load_ntk_model(path)?, None),
                None => {
                    let prefix = load_or_init_prefix(&common, &None, &init)?;
                    let ntk = compress_prefix(&prefix, &features.spec(prefix.d())?)?;
                    manifest::save_ntk_model(&common.out, "ntk", &ntk)?;
                    (ntk, Some(prefix))
                }
            };
            let x = load_or_random_input(&common, &input, ntk.d())?;
            let out = ntk_attention_forward(&ntk, &x)?;
            mtxt::write(&common.out.join("ntk_attn.mtxt"), &out)?;
            println!("wrote {}x{} output", out.rows(), out.cols());
            if let Some(prefix) = reference {
                let exact = prefix_attention(&prefix, &x)?;
                println!("max abs deviation from prefix attention: {:e}", out.max_abs_diff(&exact)?);
            }
            Ok(())
        }
        Command::ApproxError { common, d, l, m, g_min, g_max, bound, kind, scale_mode } => {
            let cfg = ApproxConfig { d, l, m, g_min, g_max, bound, kind, scale_mode };
            prepare_out(&common, "approx-error", serde_json::to_value(&cfg).expect("json"))?;
            if g_min > g_max {
                return Err(CliError::Usage("--g-min exceeds --g-max".into()));
            }
            let sweep = approx_error_sweep(&cfg, &mut SeededRng::derived(common.seed, "approx"))?;
            write_text(&common.out.join("approx_error.csv"), &approx_csv(&sweep.rows))?;
            for row in &sweep.rows {
                println!("g = {:>2}  inf_error = {:e}", row.g, row.inf_error);
            }
            for (g, reason) in &sweep.skipped {
                println!("g = {g:>2}  skipped: {reason}");
            }
            Ok(())
        }
        Command::Train { common, stylized, steps, eta, drift_every, lambda_min } => {
            let args = serde_json::json!({
                "stylized": stylized, "steps": steps, "eta": eta,
                "drift_every": drift_every, "lambda_min": lambda_min,
            });
            prepare_out(&common, "train", args)?;
            let (mut model, data) = stylized_setup(&common, &stylized)?;
            let cfg = TrainConfig {
                eta: eta.unwrap_or(0.0),
                steps,
                eta_mode: if eta.is_some() { EtaMode::Fixed } else { EtaMode::Auto },
            };
            let diagnostics = Diagnostics {
                kernel_drift_every: drift_every,
                lambda_min,
                gram_cap: ntk_attn_core::stylized::DEFAULT_GRAM_CAP,
            };
            let report = match gd_train(&mut model, &data, &cfg, &diagnostics) {
                Ok(r) => r,
                Err(TrainError::Diverged { step, report }) => {
                    write_text(&common.out.join("train.csv"), &train_csv(&report, drift_every.is_some()))?;
                    return Err(CliError::Check(format!("training diverged at step {step}")));
                }
                Err(e) => return Err(e.into()),
            };
            write_text(&common.out.join("train.csv"), &train_csv(&report, drift_every.is_some()))?;
            manifest::save_stylized_model(&common.out, "model_final", &model)?;
            println!("eta = {:e}", report.eta);
            println!("initial loss = {:e}", report.loss[0]);
            println!("final loss = {:e} ({:.3e} of initial)", report.final_loss(), report.final_loss() / report.loss[0]);
            println!("initial residual norm = {:e}", report.initial_residual);
            if let Some(l) = report.lambda_min_h0 {
                println!("lambda_min(H(0)) = {l:e}");
            }
            if let Some(r) = report.final_relative_drift() {
                println!("relative kernel drift = {r:e}");
            }
            if let Some(drift) = report.kernel_drift.iter().rev().find_map(|d| *d) {
                let disp = *report.max_disp.last().expect("at least one step");
                let ratio = drift_displacement_ratio(drift, disp, data.n(), data.d());
                println!("drift / (R sqrt(nd)) = {ratio:e}");
            }
            Ok(())
        }
        Command::Kernel { common, stylized, cap } => {
            prepare_out(&common, "kernel", serde_json::json!({ "stylized": stylized, "cap": cap }))?;
            let (model, data) = stylized_setup(&common, &stylized)?;
            let h = kernel_gram(&model, &data, cap)?;
            mtxt::write(&common.out.join("kernel.mtxt"), &h)?;
            let lambda = min_eigen_sym(&h, ntk_attn_core::eigen::default_tol(&h))?;
            if h.rows() <= 4 {
                for row in h.row_iter() {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
                    println!("H: {}", cells.join(" "));
                }
            }
            println!("size = {}", h.rows());
            println!("lambda_min = {lambda:.9}");
            println!("initial loss = {:e}", stylized_loss(&model, &data)?);
            Ok(())
        }
        Command::Gradcheck { common } => {
            prepare_out(&common, "gradcheck", serde_json::json!({}))?;
            let rows = run_all_checks(common.seed)?;
            let mut csv = String::from("name,instances,max_rel_err,pass\n");
            println!("{:<24} {:>9} {:>12} {:>6}", "gradient", "instances", "max_rel_err", "result");
            for r in &rows {
                let verdict = if r.pass { "pass" } else { "FAIL" };
                println!("{:<24} {:>9} {:>12.3e} {:>6}", r.name, r.instances, r.max_rel_err, verdict);
                csv.push_str(&format!("{},{},{:e},{}\n", r.name, r.instances, r.max_rel_err, r.pass));
            }
            write_text(&common.out.join("gradcheck.csv"), &csv)?;
            let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Check(format!("gradient check failed for {}", failed.join(", "))))
            }
        }
        Command::Bench { common, d, l, m_min_exp, m_max_exp, trials, algo } => {
            if m_min_exp > m_max_exp || m_max_exp > 30 {
                return Err(CliError::Usage("need --m-min-exp ≤ --m-max-exp ≤ 30".into()));
            }
            if trials < 3 {
                return Err(CliError::Usage("--trials must be at least 3".into()));
            }
            let cfg = BenchConfig { d, ls: l, ms: (m_min_exp..=m_max_exp).map(|e| 1usize << e).collect(), trials, algos: algo };
            prepare_out(&common, "bench", serde_json::to_value(&cfg).expect("json"))?;
            let sweep = bench::bench_sweep(&cfg, &mut SeededRng::derived(common.seed, "bench"));
            let summary = bench::summarize(&sweep.rows);
            write_text(&common.out.join("bench.csv"), &bench::rows_csv(&sweep.rows))?;
            write_text(&common.out.join("bench-summary.csv"), &bench::summary_csv(&summary))?;
            for s in &sweep.skipped {
                println!("skipped {} m={} L={}: {}", s.algo, s.m, s.l, s.reason);
            }
            report_scaling(&cfg, &summary);
            Ok(())
        }
    }
}

fn report_scaling(cfg: &BenchConfig, summary: &[bench::SummaryRow]) {
    for &l in &cfg.ls {
        for algo in &cfg.algos {
            let pts: Vec<(f64, f64)> = summary
                .iter()
                .filter(|s| s.algo == *algo && s.l == l && (*algo == Algo::Ntk || s.m >= 256))
                .map(|s| (s.m as f64, s.median))
                .collect();
            if pts.len() < 2 {
                continue;
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            match algo {
                Algo::Prefix => println!("L={l:<4} prefix  log-log slope (m ≥ 256) = {:.3}", bench::loglog_slope(&xs, &ys)),
                Algo::Ntk => {
                    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    println!("L={l:<4} ntk     median spread = {:.1}%", 100.0 * (hi / lo - 1.0));
                }
            }
        }
    }
}

pub fn train_csv(report: &TrainReport, with_drift: bool) -> String {
    let mut out = String::from("step,loss,max_disp,max_eta_grad");
    if with_drift {
        out.push_str(",kernel_drift");
    }
    out.push('\n');
    for t in 0..report.loss.len() {
        out.push_str(&format!("{t},{:e},{:e},{:e}", report.loss[t], report.max_disp[t], report.max_eta_grad[t]));
        if with_drift {
            out.push(',');
            if let Some(Some(drift)) = report.kernel_drift.get(t) {
                out.push_str(&format!("{drift:e}"));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_values_fill_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"g_max": 4, "kind": "taylor", "lambda_min": true, "l": [8, 16], "skip": null}"#).unwrap();
        let given: Vec<OsString> = ["ntk-attn", "approx-error", "--kind", "taylor_compact"].iter().map(OsString::from).collect();
        let mut extra = config_args(&path, &given).unwrap();
        extra.sort();
        assert_eq!(extra, ["--g-max=4", "--l=8,16", "--lambda-min"]);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"g_max": 4, "bound": 0.25}"#).unwrap();
        let args: Vec<OsString> = ["ntk-attn", "approx-error", "--config", path.to_str().unwrap(), "--bound=0.1"]
            .iter()
            .map(OsString::from)
            .collect();
        let cli = parse_with_config(&args).ok().unwrap();
        match cli.command {
            Command::ApproxError { g_max, bound, .. } => {
                assert_eq!(g_max, 4);
                assert_eq!(bound, 0.1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn train_csv_columns() {
        let report = TrainReport {
            eta: 0.5,
            loss: vec![2.0, 1.0],
            max_disp: vec![0.0, 0.25],
            max_eta_grad: vec![0.125, 0.0625],
            kernel_drift: vec![Some(0.0), None],
            ..TrainReport::default()
        };
        assert_eq!(train_csv(&report, false), "step,loss,max_disp,max_eta_grad\n0,2e0,0e0,1.25e-1\n1,1e0,2.5e-1,6.25e-2\n");
        assert!(train_csv(&report, true).ends_with("0,2e0,0e0,1.25e-1,0e0\n1,1e0,2.5e-1,6.25e-2,\n"));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["ntk-attn", "no-such-command"]), 2);
        assert_eq!(run(["ntk-attn", "bench", "--trials", "many"]), 2);
    }
}
