use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cola_core::frame::{open_frame_source, FrameSource};
use cola_core::gateway::mock::serve_mock;
use cola_core::gateway::MockFixtures;
use cola_core::keyframe::{select_keyframes, write_keyframes, SelectionParams};
use cola_core::metrics::{read_report, render_text, write_report};
use cola_core::pipeline::{
    export_training_data, run_har, run_vqa, Mode, RunConfig, Task, EXIT_CONFIG, EXIT_OK,
    EXIT_TOTAL_FAILURE,
};

#[derive(Parser)]
#[command(
    name = "cola",
    version,
    about = "Keyframe selection and VLM coordination runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Har,
    Vqa,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ensemble,
    Cola,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Must agree with the config's task when given.
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// VQA scoring mode; overrides the config.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Select keyframes from one video and write them as PNGs.
    ExtractKeyframes {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Upper bound on keyframes (default 10).
        #[arg(long)]
        max_frames: Option<usize>,
        /// Decoder argv template with `{input}`, for non-framestream files.
        #[arg(long)]
        decoder: Option<String>,
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Write prompt/target pairs for fine-tuning the coordinating model.
    ExportTrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the mock model protocol from a fixture file.
    ServeMock {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
    /// Re-render and print the report of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig, ExitCode> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG as u8)
    })
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

async fn cmd_run(
    config: &Path,
    task: Option<TaskArg>,
    mode: Option<ModeArg>,
) -> Result<ExitCode, ExitCode> {
    let mut cfg = load_config(config)?;
    let task = match task {
        Some(TaskArg::Har) => Task::Har,
        Some(TaskArg::Vqa) => Task::VqaMcq,
        None => cfg.task,
    };
    if task != cfg.task {
        eprintln!(
            "error: --task disagrees with the config's task {:?}",
            cfg.task
        );
        return Err(code(EXIT_CONFIG));
    }
    if let Some(m) = mode {
        cfg.mode = match m {
            ModeArg::Ensemble => Mode::Ensemble,
            ModeArg::Cola => Mode::Cola,
        };
    }
    let outcome = match task {
        Task::Har => run_har(&cfg).await,
        Task::VqaMcq => run_vqa(&cfg, cfg.mode).await,
    };
    match outcome {
        Ok(o) => {
            print!("{}", render_text(&o.report));
            for e in &o.errors {
                let ep = e
                    .endpoint
                    .as_deref()
                    .map(|n| format!(" [{n}]"))
                    .unwrap_or_default();
                eprintln!("item {} failed at {}{ep}: {}", e.id, e.stage, e.message);
            }
            println!("outputs in {}", o.output_dir.display());
            Ok(code(o.exit_code()))
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(code(e.exit_code()))
        }
    }
}

fn cmd_extract(
    video: &Path,
    out: &Path,
    max_frames: Option<usize>,
    decoder: Option<&str>,
    fps: Option<f64>,
) -> Result<ExitCode, ExitCode> {
    let fail = |c: i32, e: &dyn std::fmt::Display| {
        eprintln!("error: {e}");
        code(c)
    };
    let mut params = SelectionParams::default();
    if let Some(n) = max_frames {
        params.max_keyframes = n;
    }
    params.validate().map_err(|e| fail(EXIT_CONFIG, &e))?;
    let mut source = FrameSource::infer(video, decoder).map_err(|e| fail(EXIT_CONFIG, &e))?;
    if let Some(f) = fps {
        source = source.fps_hint(f);
    }
    let id = video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let mut stream = open_frame_source(&source).map_err(|e| fail(EXIT_TOTAL_FAILURE, &e))?;
    let kfs =
        select_keyframes(&mut stream, &params, &id).map_err(|e| fail(EXIT_TOTAL_FAILURE, &e))?;
    write_keyframes(out, &id, &kfs).map_err(|e| fail(EXIT_TOTAL_FAILURE, &e))?;
    for kf in &kfs {
        println!(
            "kf_{}.png  frame {}  t={}ms  laplacian_var={:.2}",
            kf.cluster_id, kf.frame.index, kf.frame.timestamp_ms, kf.features.laplacian_variance
        );
    }
    println!("{} keyframes written to {}", kfs.len(), out.display());
    Ok(code(EXIT_OK))
}

async fn cmd_export(config: &Path) -> Result<ExitCode, ExitCode> {
    let cfg = load_config(config)?;
    match export_training_data(&cfg).await {
        Ok(o) => {
            for e in &o.errors {
                eprintln!("item {} failed at {}: {}", e.id, e.stage, e.message);
            }
            println!(
                "{} records written to {}",
                o.records.len(),
                o.path.display()
            );
            Ok(code(o.exit_code()))
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(code(e.exit_code()))
        }
    }
}

async fn cmd_serve(fixtures: &Path, port: u16) -> Result<ExitCode, ExitCode> {
    let fx = MockFixtures::load(fixtures).map_err(|e| {
        eprintln!("error: {e}");
        code(EXIT_CONFIG)
    })?;
    eprintln!("mock model server on 127.0.0.1:{port}");
    serve_mock(fx, port).await.map_err(|e| {
        eprintln!("error: {e}");
        code(EXIT_TOTAL_FAILURE)
    })?;
    Ok(code(EXIT_OK))
}

fn cmd_report(run: &Path) -> Result<ExitCode, ExitCode> {
    let report = read_report(run).map_err(|e| {
        eprintln!("error: {}: {e}", run.display());
        code(EXIT_CONFIG)
    })?;
    write_report(&report, run).map_err(|e| {
        eprintln!("error: {e}");
        code(EXIT_TOTAL_FAILURE)
    })?;
    print!("{}", render_text(&report));
    Ok(code(EXIT_OK))
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, task, mode } => cmd_run(config, *task, *mode).await,
        Command::ExtractKeyframes {
            video,
            out,
            max_frames,
            decoder,
            fps,
        } => cmd_extract(video, out, *max_frames, decoder.as_deref(), *fps),
        Command::ExportTrain { config } => cmd_export(config).await,
        Command::ServeMock { fixtures, port } => cmd_serve(fixtures, *port).await,
        Command::Report { run } => cmd_report(run),
    };
    result.unwrap_or_else(|c| c)
}
