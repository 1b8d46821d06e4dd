use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hrv_stress::config::{CrossMode, PipelineConfig};
use hrv_stress::eval::{self, EvalReport};
use hrv_stress::ingest;
use hrv_stress::models::{self, Matrix, ModelKind};
use hrv_stress::pipeline::{self, SubjectFeatures};
use hrv_stress::synth::{self, DatasetSpec};
use hrv_stress::windows::{self, FeatureSample};

/// Marker for errors that should exit with the usage status.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

#[derive(Parser)]
#[command(name = "hrvstress", version, about = "ECG stress detection from heart rate variability")]
struct Cli {
    /// TOML file with pipeline settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the canonical format.
    Synth(SynthArgs),
    /// Resample and band-pass filter every subject of a dataset.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Window, detect and extract normalized HRV features to a CSV.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a feature CSV.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-subject-out evaluation on one dataset.
    EvalLoso {
        /// Canonical dataset directory or feature CSV.
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: EvalArgs,
    },
    /// Train on one dataset, test on another.
    EvalCross {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum)]
        cross_mode: Option<CrossModeArg>,
        #[command(flatten)]
        common: EvalArgs,
    },
    /// Leave-one-subject-out over several datasets pooled together.
    EvalCombined {
        #[arg(long = "dataset", required = true, num_args = 1..)]
        datasets: Vec<PathBuf>,
        #[command(flatten)]
        common: EvalArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "a")]
    sensor: SensorArg,
    #[arg(long, default_value_t = 12)]
    subjects: usize,
    /// Dataset id written to every manifest (defaults to synth-a / synth-b).
    #[arg(long)]
    dataset_id: Option<String>,
    #[arg(long, default_value_t = 256.0)]
    fs: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "all")]
    model: ModelArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SensorArg {
    A,
    B,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModelArg {
    Mlp,
    Rfc,
    Svm,
    All,
}

impl ModelArg {
    fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelArg::Mlp => vec![ModelKind::Mlp],
            ModelArg::Rfc => vec![ModelKind::Rfc],
            ModelArg::Svm => vec![ModelKind::Svm],
            ModelArg::All => ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CrossModeArg {
    FoldMean,
    RetrainAll,
}

const PREPROCESS_MARKER: &str = "preprocess.json";

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::EvalCross { cross_mode: Some(m), .. } = &cli.cmd {
        cfg.cross_mode = match m {
            CrossModeArg::FoldMean => CrossMode::FoldMean,
            CrossModeArg::RetrainAll => CrossMode::RetrainAll,
        };
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn synth_cmd(a: &SynthArgs, cfg: &PipelineConfig) -> Result<()> {
    if a.subjects < 2 {
        return Err(UsageError("--subjects must be at least 2".into()).into());
    }
    let (id, mut spec) = match a.sensor {
        SensorArg::A => ("synth-a", DatasetSpec::sensor_a("", a.subjects, cfg.seed)),
        SensorArg::B => ("synth-b", DatasetSpec::sensor_b("", a.subjects, cfg.seed)),
    };
    spec.dataset_id = a.dataset_id.clone().unwrap_or_else(|| id.into());
    spec.fs_hz = a.fs;
    let recs = synth::gen_dataset(&spec, &a.out).with_context(|| format!("writing dataset to {}", a.out.display()))?;
    println!("wrote {} subjects to {}", recs.len(), a.out.display());
    Ok(())
}

/// The filtering settings a preprocessed directory was produced with.
fn filter_echo(cfg: &PipelineConfig) -> serde_json::Value {
    json!({
        "target_hz": cfg.target_hz,
        "band_low_hz": cfg.band_low_hz,
        "band_high_hz": cfg.band_high_hz,
        "filter_order": cfg.filter_order,
        "filter_mode": cfg.filter_mode,
    })
}

fn preprocess_cmd(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let recs = ingest::load_dataset(input)?;
    let done: Vec<_> = {
        use rayon::prelude::*;
        recs.par_iter().map(|r| pipeline::preprocess(r, cfg)).collect()
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for r in done {
        let r = r?;
        ingest::write_recording(out.join(&r.manifest.subject_id), &r)?;
    }
    let marker = serde_json::to_string_pretty(&filter_echo(cfg))? + "\n";
    write_file(&out.join(PREPROCESS_MARKER), marker)?;
    println!("preprocessed {} subjects into {}", recs.len(), out.display());
    Ok(())
}

/// Features of every subject under `dir`. Directories carrying a
/// preprocessing marker are taken as already filtered.
fn extract_dir(dir: &Path, cfg: &PipelineConfig) -> Result<Vec<SubjectFeatures>> {
    let marker = dir.join(PREPROCESS_MARKER);
    let filtered = marker.is_file();
    if filtered {
        let text = fs::read_to_string(&marker).with_context(|| format!("reading {}", marker.display()))?;
        let echo: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", marker.display()))?;
        if echo != filter_echo(cfg) {
            bail!("{} was preprocessed with different filter settings: {echo}", dir.display());
        }
    }
    let recs = ingest::load_dataset(dir)?;
    if recs.is_empty() {
        bail!("no subject directories in {}", dir.display());
    }
    pipeline::extract_dataset(&recs, cfg, filtered)
        .into_iter()
        .zip(&recs)
        .map(|(r, rec)| r.with_context(|| format!("subject {} in {}", rec.manifest.subject_id, dir.display())))
        .collect()
}

fn extract_cmd(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let subjects = extract_dir(input, cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows: Vec<FeatureSample> = subjects.iter().flat_map(|s| s.samples.iter().cloned()).collect();
    let csv_path = out.join("features.csv");
    let f = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    windows::write_feature_csv(std::io::BufWriter::new(f), &rows)?;
    let summary: Vec<_> = subjects
        .iter()
        .map(|s| {
            json!({
                "subject_id": s.subject_id,
                "dataset_id": s.dataset_id,
                "rows": s.samples.len(),
                "windows_total": s.windows_total,
                "windows_dropped": s.windows_dropped,
                "baseline_windows": s.baseline_windows,
                "degenerate_features": s.degenerate_features,
            })
        })
        .collect();
    write_file(&out.join("extract.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    for s in subjects.iter().filter(|s| !s.degenerate_features.is_empty()) {
        eprintln!("warning: {}: flat baseline for {}", s.subject_id, s.degenerate_features.join(", "));
    }
    println!("wrote {} rows to {}", rows.len(), csv_path.display());
    Ok(())
}

fn read_csv(path: &Path) -> Result<Vec<FeatureSample>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    windows::read_feature_csv(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// Feature rows from a CSV file or a canonical dataset directory.
fn load_features(path: &Path, cfg: &PipelineConfig) -> Result<Vec<FeatureSample>> {
    if path.is_dir() {
        Ok(extract_dir(path, cfg)?.into_iter().flat_map(|s| s.samples).collect())
    } else {
        read_csv(path)
    }
}

fn train_cmd(features: &Path, model: ModelArg, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    if model == ModelArg::All {
        return Err(UsageError("train takes a single model".into()).into());
    }
    let rows = read_csv(features)?;
    let (x, y) = Matrix::from_samples(&rows);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for kind in model.kinds() {
        let seed = hrv_stress::seed::derive(cfg.seed, &["train", kind.as_str()]);
        let m = models::train(kind, &x, &y, cfg, seed).with_context(|| format!("training {kind}"))?;
        let path = out.join(format!("{kind}.hrvm"));
        write_file(&path, models::write_model(&m))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn write_reports(out: &Path, protocol: &str, title: &str, reports: &[EvalReport]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for r in reports {
        write_file(&out.join(format!("report-{protocol}-{}.json", r.model)), r.to_json())?;
    }
    let table = eval::render_table(title, reports);
    write_file(&out.join(format!("table-{protocol}.txt")), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Command::Synth(a) => synth_cmd(a, &cfg),
        Command::Preprocess { input, out } => preprocess_cmd(input, out, &cfg),
        Command::Extract { input, out } => extract_cmd(input, out, &cfg),
        Command::Train { features, model, out } => train_cmd(features, *model, out, &cfg),
        Command::EvalLoso { dataset, common } => {
            let rows = load_features(dataset, &cfg)?;
            let reports = common
                .model
                .kinds()
                .into_iter()
                .map(|k| eval::loso(&rows, k, &cfg).with_context(|| format!("LOSO with {k}")))
                .collect::<Result<Vec<_>>>()?;
            write_reports(&common.out, "loso", "Leave-one-subject-out", &reports)
        }
        Command::EvalCross { train, test, common, .. } => {
            let a = load_features(train, &cfg)?;
            let b = load_features(test, &cfg)?;
            let reports = common
                .model
                .kinds()
                .into_iter()
                .map(|k| eval::cross_dataset(&a, &b, k, &cfg).with_context(|| format!("cross-dataset with {k}")))
                .collect::<Result<Vec<_>>>()?;
            write_reports(&common.out, "cross", "Cross-dataset", &reports)
        }
        Command::EvalCombined { datasets, common } => {
            let mut rows = Vec::new();
            for d in datasets {
                rows.extend(load_features(d, &cfg)?);
            }
            let reports = common
                .model
                .kinds()
                .into_iter()
                .map(|k| eval::combined(&rows, k, &cfg).with_context(|| format!("combined with {k}")))
                .collect::<Result<Vec<_>>>()?;
            write_reports(&common.out, "combined", "Combined datasets", &reports)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
