use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hometower::hda::{aggregate_homes, assign_homes, read_assignments, write_assignments, write_tower_vectors};
use hometower::kv::KvConfig;
use hometower::sweep::{regenerate_reports, run_sweep, SweepConfig};
use hometower::synth::{score_against_truth, write_accuracy, GroundTruthTable, SynthConfig, Synthesizer};
use hometower::windows::write_window_table;
use hometower::{
    ingest, DatasetSpan, DetectOptions, DurationClass, HdaSpec, IngestOptions, LocalClock,
    TowerRegistry, UnknownTowerPolicy,
};

#[derive(Parser, Debug)]
#[command(name = "hometower", version, about = "Home detection from call detail records, scored against tower populations")]
struct Cli {
    /// key = value configuration file (synthetic generator settings for `synth`, analysis settings otherwise)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Generator seed, overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    towers: Option<PathBuf>,
    /// Dataset span as YYYY-MM-DD..YYYY-MM-DD.
    #[arg(long)]
    span: Option<String>,
    /// IANA zone used to derive local hours and days.
    #[arg(long)]
    timezone: Option<String>,
    /// Abort on the first record naming an unregistered tower.
    #[arg(long)]
    fail_unknown_tower: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a records file and report accepted and rejected lines.
    IngestCheck {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        partitions: Option<usize>,
    },
    /// Print the observation window table for a span.
    Windows {
        #[arg(long)]
        span: Option<String>,
        /// Comma-separated classes among days14, days30, month, full.
        #[arg(long)]
        classes: Option<String>,
    },
    /// Generate a synthetic dataset with known homes.
    Synth,
    /// Detect homes for one HDA over one window.
    Detect {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        hda: String,
        /// Window label such as 14d-01, month-2007-06 or full.
        #[arg(long)]
        window: String,
    },
    /// Run the HDA × window grid and write reports.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Reuse finished cells from a previous interrupted run in the same output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Rewrite the reports of a finished or interrupted sweep from its stored cells.
    Report,
    /// Score detected homes against a ground truth table.
    Score {
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        window: String,
        #[arg(long)]
        span: Option<String>,
        /// YYYY-MM-DD..YYYY-MM-DD during which migrants are away.
        #[arg(long)]
        migration_range: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn analysis_config(cli: &Cli, data: Option<&DataArgs>) -> Result<SweepConfig> {
    let mut c = match &cli.config {
        Some(p) => SweepConfig::from_kv(&KvConfig::load(p)?)?,
        None => SweepConfig::default(),
    };
    if let Some(d) = data {
        if let Some(p) = &d.records {
            c.records = p.clone();
        }
        if let Some(p) = &d.towers {
            c.towers = p.clone();
        }
        if let Some(s) = &d.span {
            c.span = DatasetSpan::parse(s)?;
        }
        if let Some(tz) = &d.timezone {
            c.clock = LocalClock::from_name(tz)?;
        }
        if d.fail_unknown_tower {
            c.unknown_tower = UnknownTowerPolicy::FailFast;
        }
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    Ok(c)
}

fn ingest_options(c: &SweepConfig) -> IngestOptions {
    IngestOptions {
        partitions: c.partitions,
        unknown_tower: c.unknown_tower,
        clock: c.clock,
        ..IngestOptions::default()
    }
}

fn find_window(c: &SweepConfig, label: &str) -> Result<hometower::ObservationWindow> {
    // any class may be named, whatever the configured grid
    let windows = match c.windows_file {
        Some(_) => c.windows()?,
        None => hometower::generate_windows(c.span, &DurationClass::ALL),
    };
    windows
        .into_iter()
        .find(|w| w.label == label)
        .ok_or_else(|| anyhow!("no window labelled {label:?} in span {}", c.span))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(w) = cli.workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        // the sweep builds its own pool; this one serves every other command
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match &cli.command {
        Command::IngestCheck { data, partitions } => {
            let mut c = analysis_config(&cli, Some(data))?;
            if let Some(p) = partitions {
                c.partitions = *p;
            }
            let registry = TowerRegistry::load(&c.towers)?;
            let ingested = ingest(&c.records, &registry, c.span, &ingest_options(&c))?;
            print!("{}", ingested.report);
            Ok(0)
        }
        Command::Windows { span, classes } => {
            let mut c = analysis_config(&cli, None)?;
            if let Some(s) = span {
                c.span = DatasetSpan::parse(s)?;
            }
            if let Some(list) = classes {
                c.classes = list
                    .split(',')
                    .map(|s| s.parse())
                    .collect::<hometower::Result<_>>()?;
                c.windows_file = None;
            }
            let windows = c.windows()?;
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    write_window_table(&windows, create(&dir.join("windows.csv"))?)?;
                }
                None => write_window_table(&windows, io::stdout().lock())?,
            }
            Ok(0)
        }
        Command::Synth => {
            let mut config = match &cli.config {
                Some(p) => SynthConfig::from_kv(&KvConfig::load(p)?)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
            let synth = Synthesizer::new(config)?;
            let paths = synth.write_dataset(&out)?;
            println!("subscribers={}", synth.user_count());
            println!("towers={}", synth.registry().len());
            println!("records={}", paths.records.display());
            println!("towers_file={}", paths.towers.display());
            println!("truth={}", paths.truth.display());
            println!("config={}", paths.config.display());
            Ok(0)
        }
        Command::Detect { data, hda, window } => {
            let c = analysis_config(&cli, Some(data))?;
            let spec: HdaSpec = hda.parse()?;
            let window = find_window(&c, window)?;
            let registry = TowerRegistry::load(&c.towers)?;
            let ingested = ingest(&c.records, &registry, c.span, &ingest_options(&c))?;
            let opts = DetectOptions {
                min_qualifying: c.min_qualifying,
            };
            let assignments = assign_homes(&ingested.partitions, &window, &spec, opts);
            let vectors = aggregate_homes(&assignments, &registry)?;
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    write_assignments(&assignments, create(&dir.join("assignments.csv"))?)?;
                    write_tower_vectors(&vectors, create(&dir.join("tower_vectors.csv"))?)?;
                    eprintln!("{} users assigned, files in {}", vectors.assigned_users(), dir.display());
                }
                None => write_assignments(&assignments, io::stdout().lock())?,
            }
            Ok(0)
        }
        Command::Sweep { data, resume } => {
            let mut c = analysis_config(&cli, Some(data))?;
            c.resume |= *resume;
            // absolute paths keep the manifest usable from any directory
            for p in [&mut c.records, &mut c.towers, &mut c.out] {
                *p = std::path::absolute(&*p)?;
            }
            for p in [&mut c.windows_file, &mut c.truth].into_iter().flatten() {
                *p = std::path::absolute(&*p)?;
            }
            let run = run_sweep(&c, None)?;
            println!(
                "cells={} failed={} pending={} out={}",
                run.result.cells.len(),
                run.result.failed(),
                run.result.pending(),
                c.out.display()
            );
            Ok(run.exit_code() as u8)
        }
        Command::Report => {
            let out = cli.out.clone().ok_or_else(|| anyhow!("report needs --out <sweep output dir>"))?;
            let run = regenerate_reports(&out)?;
            println!("rewrote {} files in {}", run.manifest.outputs.len(), out.display());
            Ok(run.exit_code() as u8)
        }
        Command::Score {
            assignments,
            truth,
            window,
            span,
            migration_range,
        } => {
            let mut c = analysis_config(&cli, None)?;
            if let Some(s) = span {
                c.span = DatasetSpan::parse(s)?;
            }
            if let Some(r) = migration_range {
                let r = DatasetSpan::parse(r)?;
                c.migration_range = Some((r.first_day(), r.last_day()));
            }
            let window = find_window(&c, window)?;
            let rows = read_assignments(File::open(assignments).with_context(|| assignments.display().to_string())?)?;
            let truth = GroundTruthTable::read_from(
                File::open(truth).with_context(|| truth.display().to_string())?,
                c.migration_range,
            )?;
            let reports = score_against_truth(&rows, &truth, &window)?;
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    write_accuracy(&reports, create(&dir.join("accuracy.csv"))?)?;
                }
                None => write_accuracy(&reports, io::stdout().lock())?,
            }
            io::stdout().flush()?;
            Ok(0)
        }
    }
}
