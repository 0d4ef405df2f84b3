use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vvf_core::export::{decode_fields, read_trajectories, write_trajectories, TensorStack, VvfFile};
use vvf_core::flowfield::integrate_streamline;
use vvf_core::highd::{self, Manifest, ManifestEntry, RecordingSource, SampleKey, SplitSpec};
use vvf_core::lbm::bench::bench;
use vvf_core::lbm::{Schedule, SolverParams, TauMode};
use vvf_core::metrics::RmseReport;
use vvf_core::pipeline::{process_sequence, PipelineConfig, DEFAULT_BETA};
use vvf_core::scenario::Scenario;
use vvf_core::scene::{SceneSequence, FRAME_DT};

#[derive(Parser)]
#[command(name = "vvf", version, about = "Velocity vector fields for highway scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse highD recordings, extract samples and write a split manifest.
    Ingest(IngestArgs),
    /// Rasterize and solve the observation frames of one sample.
    Vvf(VvfArgs),
    /// Streamline prediction from the latest frame of a field file.
    Predict(PredictArgs),
    /// Per-horizon RMSE of predicted against true trajectories.
    Eval(EvalArgs),
    /// Training tensors in the reconstructed layout.
    ExportTensors(ExportArgs),
    /// Solver throughput on a straight channel.
    Bench(BenchArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// highD tracks CSV; repeat once per recording.
    #[arg(long, required = true)]
    tracks: Vec<PathBuf>,
    /// highD recordingMeta CSV, paired with --tracks in order.
    #[arg(long, required = true)]
    meta: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Observed frames per sample.
    #[arg(long, default_value_t = highd::DEFAULT_H)]
    h: usize,
    /// Predicted steps per sample.
    #[arg(long, default_value_t = highd::DEFAULT_P)]
    p: usize,
    /// Train, test and validation fractions as TRAIN,TEST,VAL.
    #[arg(long, default_value = "0.7,0.2,0.1", value_parser = parse_ratios)]
    ratios: (f64, f64, f64),
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauChoice {
    Literal,
    Viscosity,
}

#[derive(Args)]
struct SolverOpts {
    #[arg(long, value_enum, default_value_t = TauChoice::Viscosity)]
    tau_mode: TauChoice,
    /// Relaxation constant read according to --tau-mode.
    #[arg(long, default_value_t = TauMode::DEFAULT_CONSTANT)]
    tau: f64,
}

impl SolverOpts {
    fn params(&self) -> SolverParams {
        SolverParams {
            tau_mode: match self.tau_mode {
                TauChoice::Literal => TauMode::Literal { tau: self.tau },
                TauChoice::Viscosity => TauMode::ViscosityDerived { nu: self.tau },
            },
            ..SolverParams::default()
        }
    }
}

#[derive(Args)]
struct VvfArgs {
    /// Manifest written by `ingest`.
    #[arg(long, requires = "sample_id", conflicts_with = "scenario")]
    manifest: Option<PathBuf>,
    /// Zero-based sample index within the manifest.
    #[arg(long)]
    sample_id: Option<usize>,
    /// Synthetic scenario file instead of a manifest sample.
    #[arg(long, required_unless_present = "manifest")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverOpts,
    /// Bounced-back fraction at lane markings.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Convergence threshold on the per-step velocity change, m/s.
    #[arg(long, default_value_t = 0.01)]
    conv_tol: f64,
    /// Start each frame from the previous frame's solution.
    #[arg(long)]
    warm_start: bool,
    /// Worker threads; frames are solved concurrently when above one.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Also write the target's future path in its own frame.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    vvf: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Predicted steps of 0.2 s.
    #[arg(long, default_value_t = highd::DEFAULT_P)]
    horizon: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Longest reported horizon, whole seconds.
    #[arg(long, default_value_t = 5)]
    max_horizon: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    vvf: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Lattice size as LENGTHxWIDTH.
    #[arg(long, default_value = "256x64", value_parser = parse_dims)]
    dims: (usize, usize),
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[command(flatten)]
    solver: SolverOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (l, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected LENGTHxWIDTH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension `{v}`"));
    let dims = (parse(l)?, parse(w)?);
    if dims.0 < 16 || dims.1 < 16 {
        return Err("both dimensions must be at least 16".into());
    }
    Ok(dims)
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), String> {
    let parts = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad fraction `{v}`")))
        .collect::<Result<Vec<_>, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three fractions, got {}", parts.len())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

/// `path` relative to `base` when it lies below it, else absolute.
fn relative_to(path: &Path, base: &Path) -> Result<PathBuf> {
    let abs = path.canonicalize().with_context(|| format!("cannot resolve {}", path.display()))?;
    Ok(abs.strip_prefix(base).map(Path::to_path_buf).unwrap_or(abs))
}

fn ingest(args: IngestArgs) -> Result<()> {
    if args.tracks.len() != args.meta.len() {
        bail!("{} --tracks files but {} --meta files", args.tracks.len(), args.meta.len());
    }
    let spec = SplitSpec {
        ratios: args.ratios,
        seed: args.seed,
    };
    spec.validate()?;

    let mut sources = Vec::new();
    let mut keys: Vec<SampleKey> = Vec::new();
    let mut skipped = 0;
    for (tracks, meta) in args.tracks.iter().zip(&args.meta) {
        let (m, rows) = highd::read_recording(tracks, meta)
            .with_context(|| format!("reading {} / {}", tracks.display(), meta.display()))?;
        if sources.iter().any(|s: &(u32, PathBuf, PathBuf)| s.0 == m.recording_id) {
            bail!("recording {} given twice", m.recording_id);
        }
        let (found, too_short) = highd::sample_keys(&rows, &m, args.h, args.p)?;
        skipped += too_short;
        keys.extend(found);
        sources.push((m.recording_id, tracks.clone(), meta.clone()));
    }

    let out_dir = match args.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let base = out_dir.canonicalize().with_context(|| format!("cannot resolve {}", out_dir.display()))?;
    let sources = sources
        .into_iter()
        .map(|(recording_id, tracks, meta)| {
            Ok(RecordingSource {
                recording_id,
                tracks: relative_to(&tracks, &base)?,
                meta: relative_to(&meta, &base)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let assignment = highd::assign_recordings(keys.iter().map(|k| k.recording_id), &spec)?;
    let entries: Vec<ManifestEntry> = keys
        .iter()
        .map(|&key| ManifestEntry {
            key,
            split: assignment[&key.recording_id],
        })
        .collect();
    let count = |name| entries.iter().filter(|e| e.split == name).count();
    println!(
        "{} samples from {} recordings ({} vehicles too short): train {}, test {}, val {}",
        entries.len(),
        sources.len(),
        skipped,
        count(highd::SplitName::Train),
        count(highd::SplitName::Test),
        count(highd::SplitName::Val),
    );
    Manifest {
        h: args.h,
        p: args.p,
        sources,
        entries,
    }
    .write_to(create(&args.out)?)?;
    Ok(())
}

fn load_sequence(args: &VvfArgs) -> Result<SceneSequence> {
    if let Some(path) = &args.scenario {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let scenario: Scenario = text.parse().with_context(|| format!("in {}", path.display()))?;
        return Ok(scenario.to_sequence()?);
    }
    let path = args.manifest.as_ref().expect("clap enforces manifest or scenario");
    let manifest = Manifest::read(path).with_context(|| format!("reading {}", path.display()))?;
    let id = args.sample_id.expect("clap enforces sample id");
    Ok(manifest.load_sample(id)?)
}

fn vvf(args: VvfArgs) -> Result<()> {
    let sequence = load_sequence(&args)?;
    let config = PipelineConfig {
        beta: args.beta,
        solver: SolverParams {
            max_iters: args.max_iters,
            conv_tol: args.conv_tol,
            warm_start: args.warm_start,
            schedule: if args.jobs > 1 { Schedule::Parallel } else { Schedule::Sequential },
            ..args.solver.params()
        },
        ..PipelineConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs as usize).build()?;
    let products = pool.install(|| process_sequence(&sequence, &config))?;

    for (k, f) in products.frames.iter().enumerate() {
        if !f.converged {
            eprintln!("warning: frame {k} did not converge within {} iterations", config.solver.max_iters);
        }
    }
    let iterations: Vec<String> = products.frames.iter().map(|f| f.iterations.to_string()).collect();
    println!(
        "{} frames solved, iterations per frame: {}",
        products.frames.len(),
        iterations.join(" ")
    );
    VvfFile::from_frames(&products.occupancies(), &products.fields())?.write(&args.out)?;
    if let Some(path) = &args.truth_out {
        write_trajectories(create(path)?, &[sequence.tv_centric_truth()?])?;
    }
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let file = VvfFile::read(&args.vvf).with_context(|| format!("reading {}", args.vvf.display()))?;
    let frames = decode_fields(&file)?;
    let (_, field) = frames.last().context("field file has no frames")?;
    let trajectory = integrate_streamline(field, Default::default(), FRAME_DT, args.horizon)?;
    if trajectory.extrapolated {
        eprintln!("warning: streamline left the field and was extrapolated");
    }
    write_trajectories(create(&args.out)?, &[trajectory])?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let preds = read_trajectories(open(&args.pred)?).with_context(|| format!("reading {}", args.pred.display()))?;
    let truths = read_trajectories(open(&args.truth)?).with_context(|| format!("reading {}", args.truth.display()))?;
    let report = RmseReport::compute(&preds, &truths, args.max_horizon)?;
    report.write_csv(io::stdout().lock())?;
    report.write_csv(create(&args.out)?)?;
    Ok(())
}

fn export_tensors(args: ExportArgs) -> Result<()> {
    let file = VvfFile::read(&args.vvf).with_context(|| format!("reading {}", args.vvf.display()))?;
    let stack = TensorStack::from_vvf(&file)?;
    println!(
        "initial {:?}, reconstructed {:?}",
        stack.initial.dim(),
        stack.reconstructed.dim()
    );
    stack.to_vvf().write(&args.out)?;
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let (length, width) = args.dims;
    let params = args.solver.params();
    params.validate()?;
    let report = bench(length, width, args.iters, &params, args.seed);
    println!("{}", report.summary());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Vvf(a) => vvf(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::ExportTensors(a) => export_tensors(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
