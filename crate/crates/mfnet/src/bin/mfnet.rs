//! Command-line surface: cost reports, gradient verification, checkpoint
//! inflation, toy training, and evaluation.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/config error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mfnet::arch::{build_mfnet, build_resnet18_reference, NetConfig};
use mfnet::blocks::Dims;
use mfnet::check::{run_gradient_suite, GRAD_TOLERANCE};
use mfnet::cost::{count_flops, render_report, CostReport, ReportFormat};
use mfnet::error::{Error, Result};
use mfnet::graph::{init_params, GraphSpec, ParamStore};
use mfnet::inflate::inflate_checkpoint;
use mfnet::io::{
    graph_fingerprint, parse_arch_config_with_dims, parse_train_config, save_checkpoint,
    Checkpoint, ToyRunConfig,
};
use mfnet::tensor::{Precision, Scalar};
use mfnet::train::{
    accuracy, evaluate_clips, generate_motion_dataset, generate_motion_video, temporal_shuffle,
    train, LabeledClip, MotionDataset, SyntheticMotionSpec,
};

#[derive(Parser)]
#[command(
    name = "mfnet",
    version,
    about = "Multi-fiber network construction kit: cost model, gradient checks, 2D->3D inflation, toy training"
)]
struct Cli {
    /// Worker threads; only the deterministic single-threaded mode (1) is
    /// implemented.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DimsArg {
    #[value(name = "2d")]
    Two,
    #[value(name = "3d")]
    Three,
}

impl From<DimsArg> for Dims {
    fn from(d: DimsArg) -> Dims {
        match d {
            DimsArg::Two => Dims::Two,
            DimsArg::Three => Dims::Three,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> ReportFormat {
        match f {
            FormatArg::Markdown => ReportFormat::Markdown,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Args)]
struct ArchArg {
    /// Architecture: a config file path, or one of the presets `mfnet`
    /// and `resnet18`.
    #[arg(long, default_value = "mfnet")]
    arch: String,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer parameter/multiply-add report of one architecture.
    Summarize {
        #[command(flatten)]
        arch: ArchArg,
        /// Dimensionality of the network (defaults to the config's).
        #[arg(long)]
        dims: Option<DimsArg>,
        /// Batched input shape, e.g. 1x3x224x224 (default: batch 1 at the
        /// architecture's native input).
        #[arg(long)]
        input_shape: Option<String>,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
        /// Append per-stage subtotals.
        #[arg(long)]
        per_stage: bool,
    },
    /// Side-by-side totals for several architectures.
    Compare {
        /// Config paths or presets (`mfnet`, `resnet18`), one per entry.
        #[arg(long, num_args = 1.., required = true)]
        archs: Vec<String>,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
    },
    /// Finite-difference verification of every layer kind; exits 1 on
    /// failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded random initialization as a checkpoint.
    Init {
        #[command(flatten)]
        arch: ArchArg,
        #[arg(long)]
        dims: Option<DimsArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PrecisionArg::Double)]
        precision: PrecisionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inflate a 2D checkpoint into an initialization for its 3D twin.
    Inflate {
        /// Source 2D checkpoint.
        #[arg(long)]
        from: PathBuf,
        #[command(flatten)]
        arch: ArchArg,
        #[arg(long)]
        out: PathBuf,
        /// Skip the source fingerprint check.
        #[arg(long)]
        force: bool,
    },
    /// Train the toy 3D network on the synthetic motion task.
    TrainToy {
        /// Training configuration file (optimizer.*, data.*, precision).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Output training-history CSV path.
        #[arg(long)]
        history: PathBuf,
    },
    /// Evaluate a toy checkpoint: validation accuracy, a temporally
    /// shuffled control, and the multi-clip protocol on long videos.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Clips sampled per long video.
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training configuration the checkpoint was produced with.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Arch {
    Mfnet(NetConfig),
    Resnet18,
}

fn read_text(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_arch(spec: &str, dims: Option<Dims>) -> Result<Arch> {
    match spec {
        "resnet18" => {
            if dims == Some(Dims::Three) {
                return Err(Error::Config(
                    "the resnet18 reference is a 2D network".into(),
                ));
            }
            Ok(Arch::Resnet18)
        }
        "mfnet" => Ok(Arch::Mfnet(parse_arch_config_with_dims("", dims)?)),
        path => {
            let text = read_text(&PathBuf::from(path))?;
            Ok(Arch::Mfnet(parse_arch_config_with_dims(&text, dims)?))
        }
    }
}

fn build_net(arch: &Arch) -> Result<(String, GraphSpec)> {
    match arch {
        Arch::Resnet18 => Ok(("resnet18".into(), build_resnet18_reference(1000)?)),
        Arch::Mfnet(cfg) => {
            let name = format!("mfnet-{}", cfg.dims.label());
            Ok((name, build_mfnet(cfg)?))
        }
    }
}

fn parse_input_shape(text: &str) -> Result<Vec<usize>> {
    text.split('x')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad input shape {text:?}")))
        })
        .collect()
}

fn default_input(graph: &GraphSpec) -> Vec<usize> {
    let mut shape = vec![1];
    shape.extend_from_slice(graph.input_shape());
    shape
}

fn print_report(report: &CostReport, format: FormatArg, per_stage: bool) {
    print!("{}", render_report(report, format.into()));
    if per_stage {
        println!();
        match format {
            FormatArg::Csv => {
                println!("stage,params,multiply_adds");
                for (stage, p, m) in report.stage_subtotals() {
                    println!("{stage},{p},{m}");
                }
            }
            FormatArg::Markdown => {
                println!("| stage | params | multiply-adds |\n|---|---:|---:|");
                for (stage, p, m) in report.stage_subtotals() {
                    println!("| {stage} | {p} | {m} |");
                }
            }
        }
    }
}

/// Toy network sized from the dataset spec (square frames, one channel).
fn toy_net_config(data: &SyntheticMotionSpec) -> Result<NetConfig> {
    if data.height != data.width {
        return Err(Error::Config(format!(
            "toy network needs square frames, got {}x{}",
            data.height, data.width
        )));
    }
    Ok(NetConfig {
        num_classes: data.num_classes,
        frames: data.frames,
        input_hw: data.height,
        ..NetConfig::toy_3d()
    })
}

fn run_train_toy<T: Scalar>(
    cfg: &ToyRunConfig,
    out: &PathBuf,
    history_path: &PathBuf,
) -> Result<()> {
    let net_cfg = toy_net_config(&cfg.data)?;
    let graph = build_mfnet(&net_cfg)?;
    let dataset: MotionDataset<T> = generate_motion_dataset(&cfg.data)?;
    let mut params = init_params::<T>(&graph, cfg.optimizer.seed);
    let history = train(&graph, &mut params, &dataset, &cfg.optimizer)?;

    fs::write(history_path, history.to_csv())?;
    let mut ckpt = Checkpoint::from_store(&params, &graph)?;
    ckpt.metadata
        .insert("seed".into(), cfg.optimizer.seed.to_string());
    ckpt.metadata
        .insert("iterations".into(), history.iterations.len().to_string());
    ckpt.write_to(out)?;

    let last = history.epochs.last();
    println!(
        "trained {} iterations ({} epochs); train accuracy {}, val accuracy {}",
        history.iterations.len(),
        history.epochs.len(),
        last.map_or("n/a".into(), |e| format!("{:.4}", e.train_accuracy)),
        last.map_or("n/a".into(), |e| format!("{:.4}", e.val_accuracy)),
    );
    println!("checkpoint: {}", out.display());
    println!("history: {}", history_path.display());
    Ok(())
}

fn run_eval<T: Scalar>(
    cfg: &ToyRunConfig,
    ckpt_path: &PathBuf,
    clips: usize,
    seed: u64,
) -> Result<()> {
    let net_cfg = toy_net_config(&cfg.data)?;
    let graph = build_mfnet(&net_cfg)?;
    let ckpt = Checkpoint::read_from(ckpt_path)?;
    let params: ParamStore<T> = ckpt.to_store(&graph, false)?;
    let dataset: MotionDataset<T> = generate_motion_dataset(&cfg.data)?;

    let val_acc = accuracy(&graph, &params, &dataset.val, cfg.optimizer.batch_size)?;
    println!("val accuracy: {val_acc:.4} ({} clips)", dataset.val.len());

    let shuffled: Vec<LabeledClip<T>> = dataset
        .val
        .iter()
        .enumerate()
        .map(|(i, item)| LabeledClip {
            clip: temporal_shuffle(&item.clip, seed.wrapping_add(i as u64)),
            label: item.label,
        })
        .collect();
    let shuf_acc = accuracy(&graph, &params, &shuffled, cfg.optimizer.batch_size)?;
    println!("shuffled-time control: {shuf_acc:.4}");

    // Multi-clip protocol over long videos, a few per class.
    let videos_per_class = 5usize;
    let long_frames = cfg.data.frames * 3;
    let mut hits = 0usize;
    let mut total = 0usize;
    for class in 0..cfg.data.num_classes {
        for v in 0..videos_per_class {
            let vid_seed = seed ^ ((class * videos_per_class + v) as u64).wrapping_mul(0x9E37);
            let video = generate_motion_video::<T>(&cfg.data, class, long_frames, vid_seed)?;
            let pred = evaluate_clips(&graph, &params, &video, clips, vid_seed)?;
            if pred.argmax == class {
                hits += 1;
            }
            total += 1;
        }
    }
    println!(
        "multi-clip accuracy ({clips} clips over {long_frames}-frame videos): {:.4} ({total} videos)",
        hits as f64 / total as f64
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.threads != 1 {
        return Err(Error::Config(format!(
            "only the deterministic single-threaded mode is implemented (got --threads {})",
            cli.threads
        )));
    }
    match cli.command {
        Command::Summarize {
            arch,
            dims,
            input_shape,
            format,
            per_stage,
        } => {
            let arch = load_arch(&arch.arch, dims.map(Into::into))?;
            let (_, graph) = build_net(&arch)?;
            let input = match input_shape {
                Some(text) => parse_input_shape(&text)?,
                None => default_input(&graph),
            };
            let report = count_flops(&graph, &input)?;
            print_report(&report, format, per_stage);
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { archs, format } => {
            let mut rows = Vec::new();
            for spec in &archs {
                let arch = load_arch(spec, None)?;
                let (name, graph) = build_net(&arch)?;
                let report = count_flops(&graph, &default_input(&graph))?;
                rows.push((name, spec.clone(), report.total_params, report.total_macs));
            }
            match format {
                FormatArg::Csv => {
                    println!("arch,source,params,multiply_adds");
                    for (name, src, p, m) in rows {
                        println!("{name},{src},{p},{m}");
                    }
                }
                FormatArg::Markdown => {
                    println!("| arch | source | params | multiply-adds |\n|---|---|---:|---:|");
                    for (name, src, p, m) in rows {
                        println!("| {name} | {src} | {p} | {m} |");
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed } => {
            let cases = run_gradient_suite(seed)?;
            let mut failed = 0usize;
            for case in &cases {
                println!(
                    "{} {:32} max rel err {:.3e} (tolerance {GRAD_TOLERANCE:.0e})",
                    if case.passed() { "PASS" } else { "FAIL" },
                    case.name,
                    case.max_rel_error
                );
                if !case.passed() {
                    failed += 1;
                }
            }
            if failed > 0 {
                println!("{failed}/{} cases failed", cases.len());
                return Ok(ExitCode::from(1));
            }
            println!("all {} cases passed", cases.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Init {
            arch,
            dims,
            seed,
            precision,
            out,
        } => {
            let arch = load_arch(&arch.arch, dims.map(Into::into))?;
            let (_, graph) = build_net(&arch)?;
            match precision {
                PrecisionArg::Double => {
                    save_checkpoint(&init_params::<f64>(&graph, seed), &graph, &out)?
                }
                PrecisionArg::Single => {
                    save_checkpoint(&init_params::<f32>(&graph, seed), &graph, &out)?
                }
            }
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Inflate {
            from,
            arch,
            out,
            force,
        } => {
            let cfg = match load_arch(&arch.arch, None)? {
                Arch::Mfnet(cfg) => cfg,
                Arch::Resnet18 => {
                    return Err(Error::Config("inflation applies to MF-Net configs".into()))
                }
            };
            let g2 = build_mfnet(&cfg.clone().with_dims(Dims::Two))?;
            let g3 = build_mfnet(&cfg.with_dims(Dims::Three))?;
            let mut ckpt = Checkpoint::read_from(&from)?;
            if force {
                ckpt.fingerprint = graph_fingerprint(&g2);
            }
            let inflated = inflate_checkpoint(&ckpt, &g2, &g3)?;
            inflated.write_to(&out)?;
            println!(
                "inflated {} tensors: {} -> {}",
                inflated.tensors.len(),
                from.display(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainToy {
            config,
            out,
            history,
        } => {
            let cfg = match config {
                Some(path) => parse_train_config(&read_text(&path)?)?,
                None => ToyRunConfig::default(),
            };
            match cfg.precision {
                Precision::Double => run_train_toy::<f64>(&cfg, &out, &history)?,
                Precision::Single => run_train_toy::<f32>(&cfg, &out, &history)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            ckpt,
            clips,
            seed,
            config,
        } => {
            let cfg = match config {
                Some(path) => parse_train_config(&read_text(&path)?)?,
                None => ToyRunConfig::default(),
            };
            match cfg.precision {
                Precision::Double => run_eval::<f64>(&cfg, &ckpt, clips, seed)?,
                Precision::Single => run_eval::<f32>(&cfg, &ckpt, clips, seed)?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
