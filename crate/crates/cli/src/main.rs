//! Command-line entry point for the plasticity laboratory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plastlab_cli::{config, emit, plot, presets, runner, theory_cmd, CliError};

#[derive(Parser)]
#[command(
    name = "plastlab",
    version,
    about = "Continual-learning plasticity laboratory: non-stationary task streams, \
             gradual task changes, mitigation baselines, and convergence-theory checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a task stream and write CSV/JSONL metrics plus a manifest.
    Run {
        /// Built-in configuration (see `plastlab presets`).
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the schedule's transition step size.
        #[arg(long = "step-size")]
        step_size: Option<f64>,
        /// Output directory (default: $PLASTLAB_OUT or ./results).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run seeds one after another instead of one thread per seed.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the convergence-theory verification suite.
    Theory {
        /// Seed for the suite's randomized checks.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Report path (default: <out-dir>/theory.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chart a metric per task as SVG (mean over seeds, standard-error band).
    Plot {
        /// One or more CSV result files.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Metric column to draw.
        #[arg(long, default_value = "accuracy")]
        metric: String,
        /// Split to draw (train or test).
        #[arg(long, default_value = "train")]
        split: String,
        /// One line per run id, or per seed.
        #[arg(long = "group-by", default_value = "run-id", value_parser = ["run-id", "seed"])]
        group_by: String,
        /// Output SVG path (default: <out-dir>/plot.svg).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic class-mean image dataset as text files.
    GenData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 1280)]
        train: usize,
        #[arg(long, default_value_t = 512)]
        test: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for train.txt and test.txt (default: <out-dir>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an IDX image/label pair to the text dataset format.
    ConvertIdx {
        /// IDX image file (magic 0x803).
        #[arg(long)]
        images: PathBuf,
        /// IDX label file (magic 0x801).
        #[arg(long)]
        labels: PathBuf,
        /// Number of classes the labels may take.
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Output text file.
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in run configurations.
    Presets,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Run {
            preset,
            config,
            seed,
            step_size,
            out,
            sequential,
        } => cmd_run(preset, config, seed, step_size, out, sequential),
        Cmd::Theory { seed, out } => cmd_theory(seed, out),
        Cmd::Plot {
            input,
            metric,
            split,
            group_by,
            out,
        } => cmd_plot(input, metric, split, &group_by, out),
        Cmd::GenData {
            classes,
            dim,
            train,
            test,
            noise,
            seed,
            out,
        } => cmd_gen_data(classes, dim, train, test, noise, seed, out),
        Cmd::ConvertIdx {
            images,
            labels,
            classes,
            out,
        } => cmd_convert_idx(&images, &labels, classes, &out),
        Cmd::Presets => {
            for name in presets::preset_names() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_run(
    preset: Option<String>,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    step_size: Option<f64>,
    out: Option<PathBuf>,
    sequential: bool,
) -> Result<ExitCode, CliError> {
    let (document, fallback_id): (String, String) = match (&preset, &config_path) {
        (Some(name), None) => (presets::preset(name)?.to_string(), name.clone()),
        (None, Some(path)) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::io(path.clone(), e))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            (text, stem)
        }
        _ => {
            return Err(CliError::Invalid(
                "pass exactly one of --preset or --config".into(),
            ))
        }
    };
    let mut cfg = config::parse_config(&document, &fallback_id)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = step_size {
        cfg.schedule.step_size = s;
        cfg.validate()?;
    }

    let out_dir = emit::resolve_out_dir(out.as_deref());
    let output = runner::run_experiment(&cfg, sequential)?;
    let artifacts = emit::write_run(&out_dir, &output)?;

    for status in &output.manifest.seeds {
        match (&status.error, status.failed_stage) {
            (None, _) => println!("seed {}: ok ({} ms)", status.seed, status.wall_ms),
            (Some(err), stage) => println!(
                "seed {}: FAILED{}: {err}",
                status.seed,
                stage.map_or(String::new(), |s| format!(" at stage {s}")),
            ),
        }
    }
    println!(
        "wrote {} records: {}, {}, {}",
        output.records.len(),
        artifacts.csv.display(),
        artifacts.jsonl.display(),
        artifacts.manifest.display()
    );
    Ok(if output.all_seeds_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_theory(seed: u64, out: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let out_path =
        out.unwrap_or_else(|| emit::resolve_out_dir(None).join("theory.jsonl"));
    let outcome = theory_cmd::run_theory(seed, &out_path)?;
    print!("{}", outcome.summary);
    println!("report: {}", out_path.display());
    if outcome.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprint!("{}", outcome.failures);
        Ok(ExitCode::from(1))
    }
}

fn cmd_plot(
    input: Vec<PathBuf>,
    metric: String,
    split: String,
    group_by: &str,
    out: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    let spec = plot::PlotSpec {
        metric,
        split,
        group_by: if group_by == "seed" {
            plot::GroupBy::Seed
        } else {
            plot::GroupBy::RunId
        },
    };
    let out_path = out.unwrap_or_else(|| emit::resolve_out_dir(None).join("plot.svg"));
    plot::plot_files(&input, &spec, &out_path)?;
    println!("wrote {}", out_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_data(
    classes: usize,
    dim: usize,
    train: usize,
    test: usize,
    noise: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    use plastlab_core::envs::{export_images_text, gen_image_pair};
    use plastlab_core::rng::RngStream;

    let out_dir = emit::resolve_out_dir(out.as_deref());
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(out_dir.clone(), e))?;
    let mut rng = RngStream::new(seed, runner::streams::ENV);
    let (train_ds, test_ds) = gen_image_pair(classes, dim, train, test, noise, &mut rng);
    for (name, ds) in [("train.txt", &train_ds), ("test.txt", &test_ds)] {
        let path = out_dir.join(name);
        let text = export_images_text(ds)?;
        std::fs::write(&path, text).map_err(|e| CliError::io(path.clone(), e))?;
        println!("wrote {} ({} samples)", path.display(), ds.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_convert_idx(
    images: &std::path::Path,
    labels: &std::path::Path,
    classes: usize,
    out: &std::path::Path,
) -> Result<ExitCode, CliError> {
    use plastlab_core::envs::{export_images_text, load_idx_pair};

    let ds = load_idx_pair(images, labels, classes)?;
    let text = export_images_text(&ds)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    std::fs::write(out, text).map_err(|e| CliError::io(out, e))?;
    println!("wrote {} ({} samples, dim {})", out.display(), ds.len(), ds.dim());
    Ok(ExitCode::SUCCESS)
}
