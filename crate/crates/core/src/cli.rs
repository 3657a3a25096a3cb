//! Command-line driver. Exit status: 0 when everything passed, 1 when a
//! check failed, 2 for usage, configuration and input errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fde::{Lfu, LfuConfig, LfuMode};
use crate::io::{self, AnyTensor};
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::spectral::{dct2d_normalized, dct_basis_normalized, Normalization};
use crate::tensor::{Shape, Tensor};
use crate::training::{toy_train_run, ReconstructionModel, TrainReport};
use crate::verify::reparam::random_lfu;
use crate::verify::{run_suite, SUITES};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fdnet", version, about = "Frequency-decomposed encoder toolkit: checks, benchmarks, toy training, DCT export")]
pub struct Cli {
    /// Seed for every randomized step; defaults to the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run verification suites.
    Verify {
        #[arg(long, num_args = 1.., default_value = "all", value_parser = suite_names())]
        suite: Vec<String>,
    },
    /// Time multi-branch against merged low-frequency units.
    Bench {
        #[command(subcommand)]
        target: BenchTarget,
    },
    /// Train the reconstruction model on synthetic pairs.
    TrainToy(TrainArgs),
    /// Export a DCT basis plane or the spectrum of an FDT tensor.
    Dct(DctArgs),
    /// Print the resolved configuration and parameter counts.
    Info {
        /// Square image extent used for the stage shapes.
        #[arg(long, default_value_t = 256)]
        extent: usize,
    },
}

fn suite_names() -> clap::builder::PossibleValuesParser {
    let mut names: Vec<&'static str> = SUITES.to_vec();
    names.push("all");
    clap::builder::PossibleValuesParser::new(names)
}

#[derive(Debug, Subcommand)]
pub enum BenchTarget {
    Lfu {
        #[arg(long, default_value = "1x16x64x64")]
        shape: Shape,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        dtype: Precision,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Override the configured number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Write the training report here as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Compare the loss curve against a saved report.
    #[arg(long, value_name = "PATH")]
    pub compare: Option<PathBuf>,
    /// Relative tolerance for `--compare`.
    #[arg(long, default_value_t = 1e-9)]
    pub rtol: f64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub dtype: Precision,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "basis"])))]
pub struct DctArgs {
    /// FDT tensor whose per-plane spectrum is written.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Basis indices `u,v`.
    #[arg(long, value_name = "U,V")]
    pub basis: Option<String>,
    /// Basis plane extent `HxW`.
    #[arg(long, default_value = "8x8")]
    pub extent: String,
    #[arg(long, value_enum, default_value_t = Norm::Unnormalized)]
    pub normalization: Norm,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Norm {
    Unnormalized,
    Orthonormal,
}

impl From<Norm> for Normalization {
    fn from(n: Norm) -> Self {
        match n {
            Norm::Unnormalized => Normalization::Unnormalized,
            Norm::Orthonormal => Normalization::Orthonormal,
        }
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_PASS
                }
                _ => {
                    let text = e.render().to_string();
                    let _ = write!(err, "{text}");
                    if !text.contains("Usage:") {
                        use clap::CommandFactory;
                        let _ = writeln!(err, "\n{}", Cli::command().render_usage());
                    }
                    EXIT_USAGE
                }
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Diverged { .. } => EXIT_FAIL,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_path(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.encoder.seed = seed;
        cfg.train.seed = seed;
    }
    let seed = cfg.train.seed;
    match &cli.command {
        Command::Verify { suite } => verify(suite, seed, cli.json, out),
        Command::Bench {
            target: BenchTarget::Lfu { shape, iters, dtype },
        } => match dtype {
            Precision::F32 => bench_lfu::<f32>(*shape, *iters, seed, cli.json, out),
            Precision::F64 => bench_lfu::<f64>(*shape, *iters, seed, cli.json, out),
        },
        Command::TrainToy(args) => train_toy(&mut cfg, args, cli.json, out),
        Command::Dct(args) => dct(args, cli.json, out),
        Command::Info { extent } => info(&cfg, *extent, cli.json, out),
    }
}

fn verify(suites: &[String], seed: u64, json: bool, out: &mut dyn Write) -> Result<i32> {
    let report = run_suite(suites, seed)?;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        for r in &report.reports {
            writeln!(out, "{r}")?;
        }
        let passed = report.reports.iter().filter(|r| r.passed()).count();
        writeln!(out, "{passed}/{} checks passed (seed {seed})", report.reports.len())?;
    }
    Ok(if report.passed { EXIT_PASS } else { EXIT_FAIL })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub min_ms: f64,
}

impl Timing {
    fn from_samples(samples: &[f64]) -> Self {
        Timing {
            mean_ms: samples.iter().sum::<f64>() / samples.len().max(1) as f64,
            min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub shape: [usize; 4],
    pub dtype: DType,
    pub iters: usize,
    pub seed: u64,
    pub multi_branch: Timing,
    pub merged: Timing,
    /// One-off cost of folding the branches into one kernel.
    pub merge_ms: f64,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn bench_lfu<T: Scalar>(shape: Shape, iters: usize, seed: u64, json: bool, out: &mut dyn Write) -> Result<i32> {
    if iters == 0 || shape.numel() == 0 {
        return Err(crate::error::invalid("bench needs at least one iteration and a non-empty shape"));
    }
    let cfg = LfuConfig::default_for(shape.c())?;
    let (store, lfu): (ParamStore<T>, Lfu) = random_lfu(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe7c);
    let x = Tensor::<T>::rand_uniform(shape, -1.0, 1.0, &mut rng);
    let started = Instant::now();
    let kernel = lfu.merged_kernel(&store)?;
    let merge_ms = started.elapsed().as_secs_f64() * 1e3;

    let run_multi = || -> Result<Tensor<T>> {
        let mut g = Graph::new(Mode::Eval);
        let xn = g.input(x.clone())?;
        let y = lfu.forward(&mut g, &store, xn, LfuMode::MultiBranch)?;
        Ok(g.value(y).clone())
    };
    let run_merged = || -> Result<Tensor<T>> {
        let mut g = Graph::new(Mode::Eval);
        let xn = g.input(x.clone())?;
        let y = lfu.forward_with_kernel(&mut g, &store, xn, &kernel)?;
        Ok(g.value(y).clone())
    };
    let (mut t_multi, mut t_merged) = (Vec::with_capacity(iters), Vec::with_capacity(iters));
    let (mut y_multi, mut y_merged) = (None, None);
    for _ in 0..iters {
        let t = Instant::now();
        y_multi = Some(run_multi()?);
        t_multi.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        y_merged = Some(run_merged()?);
        t_merged.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let diff = y_multi.unwrap().max_abs_diff(&y_merged.unwrap())?.as_f64();
    let tolerance = match T::DTYPE {
        DType::F32 => 1e-4,
        DType::F64 => 1e-10,
    };
    let report = BenchReport {
        shape: shape.0,
        dtype: T::DTYPE,
        iters,
        seed,
        multi_branch: Timing::from_samples(&t_multi),
        merged: Timing::from_samples(&t_merged),
        merge_ms,
        max_abs_diff: diff,
        tolerance,
        passed: diff <= tolerance,
    };
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        writeln!(out, "lfu {} {} x{} seed={}", shape, T::DTYPE, iters, seed)?;
        for (name, t) in [("multi_branch", &report.multi_branch), ("merged", &report.merged)] {
            writeln!(out, "  {name:<13} mean {:>9.3} ms  min {:>9.3} ms", t.mean_ms, t.min_ms)?;
        }
        writeln!(out, "  merge once    {merge_ms:.3} ms")?;
        writeln!(out, "  max abs diff  {diff:.3e} (tol {tolerance:.0e})")?;
    }
    Ok(if report.passed { EXIT_PASS } else { EXIT_FAIL })
}

/// Largest relative deviation between two loss curves; infinite if lengths differ.
pub fn curve_deviation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn train_toy(cfg: &mut PipelineConfig, args: &TrainArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;
    let reference: Option<TrainReport> = match &args.compare {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let report = match args.dtype {
        Precision::F32 => toy_train_run::<f32>(&cfg.train, &cfg.encoder)?,
        Precision::F64 => toy_train_run::<f64>(&cfg.train, &cfg.encoder)?,
    };
    if let Some(p) = &args.out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    let deviation = reference.as_ref().map(|r| curve_deviation(&r.losses, &report.losses));
    let matches = deviation.is_none_or(|d| d <= args.rtol);
    if json {
        let mut v = serde_json::to_value(&report)?;
        v["halved"] = report.halved().into();
        if let Some(d) = deviation {
            v["fixture_deviation"] = if d.is_finite() { d.into() } else { serde_json::Value::Null };
            v["fixture_match"] = matches.into();
        }
        writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
    } else {
        let stride = (report.losses.len() / 10).max(1);
        for (k, l) in report.losses.iter().enumerate() {
            if k % stride == 0 || k + 1 == report.losses.len() {
                writeln!(out, "step {k:>5}  loss {l:.6e}")?;
            }
        }
        writeln!(
            out,
            "initial {:.6e} final {:.6e} ratio {:.4} ({} parameters, seed {})",
            report.initial_loss, report.final_loss, report.ratio, report.parameters, report.seed
        )?;
        if let Some(d) = deviation {
            writeln!(out, "fixture deviation {d:.3e} (rtol {:.0e}): {}", args.rtol, if matches { "match" } else { "MISMATCH" })?;
        }
    }
    Ok(if report.halved() && matches { EXIT_PASS } else { EXIT_FAIL })
}

fn parse_pair(s: &str, sep: &[char], what: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(sep).collect();
    match parts.as_slice() {
        [a, b] => match (a.trim().parse(), b.trim().parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(crate::error::invalid(format!("cannot parse {what} `{s}`"))),
        },
        _ => Err(crate::error::invalid(format!("{what} `{s}` needs two values"))),
    }
}

fn dct(args: &DctArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    let norm: Normalization = args.normalization.into();
    let (kind, written) = if let Some(input) = &args.input {
        let spectrum = match io::read_any(input)? {
            AnyTensor::F32(t) => AnyTensor::F32(dct2d_normalized(&t, norm)?),
            AnyTensor::F64(t) => AnyTensor::F64(dct2d_normalized(&t, norm)?),
        };
        io::write_any(&args.out, &spectrum)?;
        ("spectrum", spectrum)
    } else {
        let (u, v) = parse_pair(args.basis.as_deref().unwrap_or_default(), &[','], "basis")?;
        let (h, w) = parse_pair(&args.extent, &['x', 'X'], "extent")?;
        let b = dct_basis_normalized::<f64>(u, v, h, w, norm)?;
        let t = Tensor::from_vec(Shape::new(1, 1, h, w), b.values)?;
        io::write(&args.out, &t)?;
        ("basis", AnyTensor::F64(t))
    };
    if json {
        let v = serde_json::json!({
            "kind": kind,
            "out": args.out.display().to_string(),
            "shape": written.shape().0,
            "dtype": written.dtype(),
            "normalization": norm,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
    } else {
        writeln!(out, "wrote {kind} {} {} to {}", written.shape(), written.dtype(), args.out.display())?;
    }
    Ok(EXIT_PASS)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InfoReport {
    pub config: PipelineConfig,
    pub extent: usize,
    pub stage_shapes: Vec<[usize; 3]>,
    pub encoder_parameters: usize,
    pub cru_ir_parameters: usize,
    pub cru_vis_parameters: usize,
    pub total_parameters: usize,
}

fn info(cfg: &PipelineConfig, extent: usize, json: bool, out: &mut dyn Write) -> Result<i32> {
    cfg.encoder.validate()?;
    let mut store = ParamStore::<f32>::new();
    let model = ReconstructionModel::new(&mut store, cfg.encoder.clone())?;
    let stride = cfg.encoder.cumulative_stride();
    let mut shapes = Vec::new();
    let mut size = extent / 2;
    for (s, st) in cfg.encoder.stage_strides().into_iter().enumerate() {
        size /= st;
        shapes.push([cfg.encoder.stage_channels(s), size, size]);
    }
    let report = InfoReport {
        config: cfg.clone(),
        extent,
        stage_shapes: shapes,
        encoder_parameters: model.encoder.declared_param_count(),
        cru_ir_parameters: model.cru_i.param_count(),
        cru_vis_parameters: model.cru_v.param_count(),
        total_parameters: store.trainable_count(),
    };
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        let echo = toml::to_string(&report.config).map_err(|e| crate::error::invalid(e.to_string()))?;
        writeln!(out, "{echo}")?;
        writeln!(out, "stage shapes at {extent}x{extent} (stride {stride}):")?;
        for (s, [c, h, w]) in report.stage_shapes.iter().enumerate() {
            writeln!(out, "  stage {s}: ({c},{h},{w})")?;
        }
        writeln!(out, "parameters: encoder {}", report.encoder_parameters)?;
        writeln!(out, "            cru_ir  {}", report.cru_ir_parameters)?;
        writeln!(out, "            cru_vis {}", report.cru_vis_parameters)?;
        writeln!(out, "            total   {}", report.total_parameters)?;
    }
    Ok(EXIT_PASS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut full = vec!["fdnet"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_two() {
        let (code, _, err) = call(&["verify", "--suite", "ffu"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("Usage"), "{err}");
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&["info", "--nope"]).0, EXIT_USAGE);
        assert_eq!(call(&[]).0, EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, EXIT_PASS);
        assert!(out.contains("verify"));
    }

    #[test]
    fn info_reports_default_shapes() {
        let (code, out, _) = call(&["info", "--json"]);
        assert_eq!(code, EXIT_PASS);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["stage_shapes"], serde_json::json!([[16, 128, 128], [32, 64, 64], [64, 32, 32]]));
        let parts = ["encoder_parameters", "cru_ir_parameters", "cru_vis_parameters"]
            .iter()
            .map(|k| v[k].as_u64().unwrap())
            .sum::<u64>();
        assert_eq!(parts, v["total_parameters"].as_u64().unwrap());
    }

    #[test]
    fn curve_deviation_basics() {
        assert_eq!(curve_deviation(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!(curve_deviation(&[1.0], &[1.0, 2.0]).is_infinite());
        assert!((curve_deviation(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
