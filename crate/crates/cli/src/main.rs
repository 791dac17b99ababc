use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppg_stress::dataset::{self, FeatureMatrix, PipelineConfig, WindowSpec, DEFAULT_SWEEP_SIZES};
use ppg_stress::eval::{self, CvReport, EvalConfig, SelectionMode, UTestMode};
use ppg_stress::hrv::{CATALOG, CATALOG_VERSION};
use ppg_stress::models::ModelKind;
use ppg_stress::signal_io::{self, Dataset, SynthCohortSpec};
use ppg_stress::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ppgstress",
    version,
    about = "Stress detection from PPG-derived HRV features"
)]
struct Cli {
    /// Worker threads (default: number of available processors).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort to disk.
    Synth {
        #[command(flatten)]
        cohort: CohortArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the windowed feature matrix as CSV.
    Features {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        cohort: CohortArgs,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-subject-out evaluation.
    Eval {
        #[command(flatten)]
        source: EvalSource,
        #[command(flatten)]
        cohort: CohortArgs,
        #[command(flatten)]
        window: WindowArgs,
        /// Number of ANOVA-ranked features kept per fold.
        #[arg(long, default_value_t = 35, value_parser = clap::value_parser!(u32).range(1..))]
        k: u32,
        #[arg(long, value_enum, default_values_t = [ModelArg::Lda])]
        model: Vec<ModelArg>,
        #[arg(long, value_enum, default_value_t = SelectionArg::PerFold)]
        selection: SelectionArg,
        /// Permute labels within each subject first (chance-level control).
        #[arg(long)]
        shuffle_labels: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LOSO accuracy across window sizes.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_SIZES)]
        sizes: Vec<f64>,
        #[arg(long, default_value_t = 5.0)]
        step: f64,
        #[arg(long, default_value_t = 35, value_parser = clap::value_parser!(u32).range(1..))]
        k: u32,
        #[arg(long, value_enum, default_value_t = ModelArg::Lda)]
        model: ModelArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mann-Whitney U test of SUDs ratings between conditions.
    Suds {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::Normal)]
        mode: ModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the HRV feature catalog.
    Catalog {
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Dataset manifest (manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Use a generated cohort instead of recordings.
    #[arg(long)]
    synth: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct EvalSource {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    synth: bool,
    /// Feature matrix CSV written by `features`.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

#[derive(Args)]
struct CohortArgs {
    /// Subjects in a generated cohort.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    subjects: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct WindowArgs {
    /// Window length in seconds.
    #[arg(long, default_value_t = 80.0)]
    window: f64,
    /// Window step in seconds.
    #[arg(long, default_value_t = 5.0)]
    step: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Lda,
    Knn,
    Sgd,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Lda => ModelKind::Lda,
            ModelArg::Knn => ModelKind::Knn,
            ModelArg::Sgd => ModelKind::Sgd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    PerFold,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Normal,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn cohort_spec(c: &CohortArgs) -> SynthCohortSpec {
    SynthCohortSpec {
        n_subjects: c.subjects as usize,
        seed: c.seed,
        ..Default::default()
    }
}

fn load(manifest: Option<&Path>, cohort: &CohortArgs) -> Result<Dataset> {
    match manifest {
        Some(path) => signal_io::load_dataset(path),
        None => signal_io::synth_cohort(&cohort_spec(cohort)),
    }
}

/// Writes `text` to `dir/name` when an output directory is given, else to stdout.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn summarize(model: ModelKind, r: &CvReport) {
    eprintln!("{model}: LOSO over {} subjects", r.folds.len());
    for f in &r.folds {
        eprintln!(
            "  {:<8} {:>4} windows  accuracy {:.4}",
            f.subject, f.n_windows, f.accuracy
        );
    }
    eprintln!(
        "  mean accuracy {:.4}  pooled accuracy {:.4}",
        r.mean_accuracy, r.pooled_accuracy
    );
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let pipeline = PipelineConfig::default();

    match cli.command {
        Command::Synth { cohort, out } => {
            let ds = signal_io::synth_cohort(&cohort_spec(&cohort))?;
            let manifest = signal_io::write_dataset(&ds, &out)?;
            eprintln!("wrote {} subjects to {}", ds.len(), manifest.display());
        }

        Command::Features {
            source,
            cohort,
            window,
            out,
        } => {
            let spec = WindowSpec::new(window.window, window.step)?;
            let ds = load(source.manifest.as_deref(), &cohort)?;
            let (m, log) = dataset::build_matrix(&ds, &spec, &pipeline)?;
            for s in &log.subjects {
                eprintln!(
                    "{}: {} windows, {} kept, {} RR intervals rejected",
                    s.subject_id, s.windows, s.kept, s.n_rejected_intervals
                );
                for (reason, n) in &s.dropped {
                    eprintln!("  dropped {n}: {reason}");
                }
            }
            let mut buf = Vec::new();
            m.write_csv(&mut buf)?;
            emit(
                out.as_deref(),
                "features.csv",
                &String::from_utf8_lossy(&buf),
            )?;
        }

        Command::Eval {
            source,
            cohort,
            window,
            k,
            model,
            selection,
            shuffle_labels,
            out,
        } => {
            let spec = WindowSpec::new(window.window, window.step)?;
            let (m, ds) = match &source.matrix {
                Some(path) => {
                    let file = fs::File::open(path).map_err(io_err(path))?;
                    (FeatureMatrix::read_csv(file)?, None)
                }
                None => {
                    let ds = load(source.manifest.as_deref(), &cohort)?;
                    let (m, _) = dataset::build_matrix(&ds, &spec, &pipeline)?;
                    (m, Some(ds))
                }
            };
            let m = if shuffle_labels {
                eval::shuffle_labels_within_subjects(&m, cohort.seed)
            } else {
                m
            };
            let suds = match &ds {
                Some(ds) if !shuffle_labels => Some(eval::suds_report(ds, UTestMode::Normal)?),
                _ => None,
            };
            let mut reports = serde_json::Map::new();
            for kind in model.into_iter().map(ModelKind::from) {
                let cfg = EvalConfig {
                    k: k as usize,
                    model: kind,
                    seed: cohort.seed,
                    selection: match selection {
                        SelectionArg::PerFold => SelectionMode::PerFold,
                        SelectionArg::Global => SelectionMode::Global,
                    },
                    ..Default::default()
                };
                let mut r = eval::loso_matrix(&m, &cfg)?;
                if ds.is_some() {
                    r.config.window = Some(spec);
                }
                r.suds = suds.clone();
                summarize(kind, &r);
                match out.as_deref() {
                    Some(_) => emit(
                        out.as_deref(),
                        &format!("eval_{kind}.json"),
                        &(r.to_json()? + "\n"),
                    )?,
                    None => {
                        reports.insert(kind.to_string(), serde_json::to_value(&r)?);
                    }
                }
            }
            if out.is_none() {
                let text = serde_json::to_string_pretty(&reports)? + "\n";
                emit(None, "", &text)?;
            }
        }

        Command::Sweep {
            source,
            cohort,
            sizes,
            step,
            k,
            model,
            out,
        } => {
            let ds = load(source.manifest.as_deref(), &cohort)?;
            let cfg = EvalConfig {
                k: k as usize,
                model: model.into(),
                seed: cohort.seed,
                ..Default::default()
            };
            let rows = eval::sweep_windows(&ds, &sizes, step, &cfg, &pipeline)?;
            for r in &rows {
                eprintln!(
                    "window {:>5} s  mean {:.4}  pooled {:.4}",
                    r.window_s, r.mean_accuracy, r.pooled_accuracy
                );
            }
            let mut buf = Vec::new();
            eval::write_sweep_csv(&rows, &mut buf)?;
            emit(out.as_deref(), "sweep.csv", &String::from_utf8_lossy(&buf))?;
        }

        Command::Suds {
            source,
            cohort,
            mode,
            out,
        } => {
            let ds = load(source.manifest.as_deref(), &cohort)?;
            let mode = match mode {
                ModeArg::Exact => UTestMode::Exact,
                ModeArg::Normal => UTestMode::Normal,
            };
            let r = eval::suds_report(&ds, mode)?;
            eprintln!(
                "relaxing median {}  stressful median {}  U {}  p {:.3e}",
                r.relaxing.median, r.stressful.median, r.test.u, r.test.p_value
            );
            emit(
                out.as_deref(),
                "suds.json",
                &(serde_json::to_string_pretty(&r)? + "\n"),
            )?;
        }

        Command::Catalog { format } => {
            let text = match format {
                FormatArg::Json => {
                    let v = serde_json::json!({
                        "version": CATALOG_VERSION,
                        "features": CATALOG,
                    });
                    serde_json::to_string_pretty(&v)? + "\n"
                }
                FormatArg::Csv => {
                    let mut s = String::from("name,domain,unit,formula\n");
                    for d in &CATALOG {
                        let domain = format!("{:?}", d.domain).to_lowercase();
                        s += &format!("{},{domain},{},\"{}\"\n", d.name, d.unit, d.formula);
                    }
                    s
                }
            };
            emit(None, "", &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
