//! The HDA × window experiment grid: detection, persistence, metrics and
//! reports.
//!
//! Windows are processed one at a time and every HDA still missing for a
//! window is detected in a single pass over the user partitions. Finished
//! cells are persisted immediately, so an interrupted run can be resumed.
//! Reports are derived from the per-tower count vectors alone, which makes
//! them independent of worker count, partition count and resume history.

mod report;
pub mod store;
pub mod svg;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdr::{ingest, DatasetSpan, IngestOptions, IngestReport, LocalClock, TowerRegistry, UnknownTowerPolicy, UserPartition};
use crate::error::{Error, Result};
use crate::hda::{CellCounts, DetectOptions, HdaSpec, HomeDetector, TowerVectors};
use crate::kv::KvConfig;
use crate::metrics::{evaluate, MetricReport};
use crate::synth::{AccuracyReport, GroundTruthTable, Tally};
use crate::windows::{generate_windows, read_window_table, DurationClass, ObservationWindow};

pub use report::{emit_reports, REPORT_FILES};
use store::{CellStore, StoredAccuracy, StoredCell};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

const CONFIG_KEYS: &[&str] = &[
    "records",
    "towers",
    "out",
    "windows_file",
    "truth",
    "migration_range",
    "span",
    "window_classes",
    "hdas",
    "exclusion_threshold",
    "min_qualifying",
    "partitions",
    "workers",
    "timezone",
    "unknown_tower",
    "resume",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub records: PathBuf,
    pub towers: PathBuf,
    pub out: PathBuf,
    /// Explicit window table; overrides `classes` when set.
    pub windows_file: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub migration_range: Option<(NaiveDate, NaiveDate)>,
    pub span: DatasetSpan,
    pub classes: Vec<DurationClass>,
    pub hdas: Vec<HdaSpec>,
    /// Towers with fewer assigned users than this are left out of the masked Pearson.
    pub exclusion_threshold: u64,
    pub min_qualifying: u32,
    pub partitions: usize,
    pub workers: usize,
    pub clock: LocalClock,
    pub unknown_tower: UnknownTowerPolicy,
    pub resume: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            records: "records.csv".into(),
            towers: "towers.csv".into(),
            out: "out".into(),
            windows_file: None,
            truth: None,
            migration_range: None,
            span: DatasetSpan::parse("2007-05-13..2007-10-13").unwrap(),
            classes: DurationClass::ALL.to_vec(),
            hdas: HdaSpec::canonical(),
            exclusion_threshold: 0,
            min_qualifying: 1,
            partitions: 16,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            clock: LocalClock::default(),
            unknown_tower: UnknownTowerPolicy::Skip,
            resume: false,
        }
    }
}

fn parse_list<T>(text: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

impl SweepConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let unknown = kv.unknown_keys(CONFIG_KEYS);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let mut c = SweepConfig::default();
        if let Some(v) = kv.get("records") {
            c.records = v.into();
        }
        if let Some(v) = kv.get("towers") {
            c.towers = v.into();
        }
        if let Some(v) = kv.get("out") {
            c.out = v.into();
        }
        c.windows_file = kv.get("windows_file").filter(|v| !v.is_empty()).map(Into::into);
        c.truth = kv.get("truth").filter(|v| !v.is_empty()).map(Into::into);
        if let Some(v) = kv.get("migration_range").filter(|v| !v.is_empty()) {
            let r = DatasetSpan::parse(v)?;
            c.migration_range = Some((r.first_day(), r.last_day()));
        }
        if let Some(v) = kv.get("span") {
            c.span = DatasetSpan::parse(v)?;
        }
        if let Some(v) = kv.get("window_classes") {
            c.classes = parse_list(v, str::parse)?;
        }
        if let Some(v) = kv.get("hdas") {
            c.hdas = parse_list(v, str::parse)?;
        }
        if let Some(v) = kv.parsed("exclusion_threshold")? {
            c.exclusion_threshold = v;
        }
        if let Some(v) = kv.parsed("min_qualifying")? {
            c.min_qualifying = v;
        }
        if let Some(v) = kv.parsed("partitions")? {
            c.partitions = v;
        }
        if let Some(v) = kv.parsed("workers")? {
            c.workers = v;
        }
        if let Some(v) = kv.get("timezone") {
            c.clock = LocalClock::from_name(v)?;
        }
        if let Some(v) = kv.get("unknown_tower") {
            c.unknown_tower = match v {
                "skip" => UnknownTowerPolicy::Skip,
                "fail" => UnknownTowerPolicy::FailFast,
                other => return Err(Error::Config(format!("unknown_tower must be skip or fail, got {other:?}"))),
            };
        }
        if let Some(v) = kv.parsed("resume")? {
            c.resume = v;
        }
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        let path = |p: &Path| p.display().to_string();
        kv.set("records", path(&self.records));
        kv.set("towers", path(&self.towers));
        kv.set("out", path(&self.out));
        kv.set("windows_file", self.windows_file.as_deref().map(path).unwrap_or_default());
        kv.set("truth", self.truth.as_deref().map(path).unwrap_or_default());
        kv.set(
            "migration_range",
            self.migration_range.map(|(a, b)| format!("{a}..{b}")).unwrap_or_default(),
        );
        kv.set("span", self.span);
        let classes: Vec<&str> = self.classes.iter().map(|c| c.as_str()).collect();
        kv.set("window_classes", classes.join(","));
        let hdas: Vec<&str> = self.hdas.iter().map(HdaSpec::name).collect();
        kv.set("hdas", hdas.join(","));
        kv.set("exclusion_threshold", self.exclusion_threshold);
        kv.set("min_qualifying", self.min_qualifying);
        kv.set("partitions", self.partitions);
        kv.set("workers", self.workers);
        kv.set("timezone", self.clock.name());
        kv.set(
            "unknown_tower",
            match self.unknown_tower {
                UnknownTowerPolicy::Skip => "skip",
                UnknownTowerPolicy::FailFast => "fail",
            },
        );
        kv.set("resume", self.resume);
        kv
    }

    pub fn windows(&self) -> Result<Vec<ObservationWindow>> {
        match &self.windows_file {
            Some(p) => {
                let f = File::open(p).map_err(|e| Error::io(p, e))?;
                read_window_table(BufReader::new(f))
            }
            None => Ok(generate_windows(self.span, &self.classes)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "detail")]
pub enum CellStatus {
    Done,
    Failed(String),
    /// Not computed yet, for instance after an interrupted run.
    Pending,
}

impl CellStatus {
    pub fn tag(&self) -> String {
        match self {
            CellStatus::Done => "ok".into(),
            CellStatus::Failed(e) => format!("failed: {e}"),
            CellStatus::Pending => "pending".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub hda: String,
    pub window: ObservationWindow,
    pub status: CellStatus,
    pub counts: Option<CellCounts>,
    pub metrics: Option<MetricReport>,
    pub accuracy: Option<AccuracyReport>,
}

/// One cell per (hda, window), HDA-major in configured order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub hdas: Vec<String>,
    pub windows: Vec<ObservationWindow>,
    pub cells: Vec<CellResult>,
    pub exclusion_threshold: u64,
}

impl SweepResult {
    pub fn cell(&self, hda: &str, window: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.hda == hda && c.window.label == window)
    }

    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c.status, CellStatus::Failed(_))).count()
    }

    pub fn pending(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Pending).count()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.status == CellStatus::Done)
    }
}

#[derive(Clone, Debug, Default)]
pub struct GridOptions {
    pub exclusion_threshold: u64,
    pub detect: DetectOptions,
    /// Stop after computing this many new cells; the rest stay pending.
    pub max_new_cells: Option<usize>,
}

struct Computed {
    counts: CellCounts,
    accuracy: Option<StoredAccuracy>,
}

fn compute_window(
    partitions: &[UserPartition],
    registry: &TowerRegistry,
    window: &ObservationWindow,
    specs: &[&HdaSpec],
    detect: DetectOptions,
    truth: Option<&GroundTruthTable>,
) -> Result<Vec<Computed>> {
    let empty = || -> Vec<Computed> {
        specs
            .iter()
            .map(|_| Computed {
                counts: CellCounts::zeros(registry.len()),
                accuracy: truth.map(|_| StoredAccuracy {
                    overall: Tally::default(),
                    migrants: Tally::default(),
                    non_migrants: Tally::default(),
                }),
            })
            .collect()
    };
    let partials: Vec<Result<Vec<Computed>>> = partitions
        .par_iter()
        .map(|part| {
            let mut detector = HomeDetector::new();
            let mut acc = empty();
            let mut failure = None;
            for trace in part.users() {
                let row = match truth {
                    Some(t) => match t.get(trace.user) {
                        Some(r) => Some((r.home, t.migrated_during(trace.user, window))),
                        None => return Err(Error::MissingTruth(trace.user.0)),
                    },
                    None => None,
                };
                let active = detector.detect_in_window(trace.records, window, specs.iter().copied(), detect, |i, d| {
                    if let Err(e) = acc[i].counts.add(d, registry) {
                        failure.get_or_insert(e);
                    }
                    if let (Some((home, migrated)), Some(a)) = (row, acc[i].accuracy.as_mut()) {
                        let hit = d.home == Some(home);
                        for t in [&mut a.overall, if migrated { &mut a.migrants } else { &mut a.non_migrants }] {
                            t.total += 1;
                            t.correct += u64::from(hit);
                        }
                    }
                });
                if active {
                    for c in acc.iter_mut() {
                        c.counts.users_active += 1;
                    }
                }
            }
            failure.map_or(Ok(acc), Err)
        })
        .collect();
    let mut merged = empty();
    for partial in partials {
        for (m, p) in merged.iter_mut().zip(partial?) {
            m.counts.merge(&p.counts);
            if let (Some(a), Some(b)) = (m.accuracy.as_mut(), p.accuracy) {
                for (x, y) in [(&mut a.overall, b.overall), (&mut a.migrants, b.migrants), (&mut a.non_migrants, b.non_migrants)] {
                    x.correct += y.correct;
                    x.total += y.total;
                }
            }
        }
    }
    Ok(merged)
}

fn finished_cell(
    hda: &str,
    window: &ObservationWindow,
    stored: &StoredCell,
    registry: &TowerRegistry,
    threshold: u64,
) -> CellResult {
    let vectors = TowerVectors::from_counts(stored.counts.x.clone(), registry);
    CellResult {
        hda: hda.to_string(),
        window: window.clone(),
        status: CellStatus::Done,
        counts: Some(stored.counts.clone()),
        metrics: Some(evaluate(hda, window, &vectors, threshold)),
        accuracy: stored.accuracy.as_ref().map(|a| AccuracyReport {
            hda: hda.to_string(),
            window: window.label.clone(),
            overall: a.overall,
            migrants: a.migrants,
            non_migrants: a.non_migrants,
        }),
    }
}

/// Runs the grid on already ingested partitions. With a store, finished
/// cells found there are reused and new ones are persisted as they complete.
/// Only a user missing from `truth` is fatal; a cell that cannot be
/// persisted is marked failed and the run continues.
pub fn run_grid(
    partitions: &[UserPartition],
    registry: &TowerRegistry,
    windows: &[ObservationWindow],
    hdas: &[HdaSpec],
    truth: Option<&GroundTruthTable>,
    options: &GridOptions,
    mut store: Option<&mut CellStore>,
) -> Result<SweepResult> {
    let mut done: BTreeMap<(String, String), StoredCell> = match store.as_deref() {
        Some(s) => s.load(registry)?,
        None => BTreeMap::new(),
    };
    let mut failed: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut budget = options.max_new_cells;

    'windows: for window in windows {
        let todo: Vec<&HdaSpec> = hdas
            .iter()
            .filter(|h| !done.contains_key(&(h.name().to_string(), window.label.clone())))
            .collect();
        if todo.is_empty() {
            continue;
        }
        if budget == Some(0) {
            break;
        }
        let computed = compute_window(partitions, registry, window, &todo, options.detect, truth)?;
        for (spec, c) in todo.iter().zip(computed) {
            if budget == Some(0) {
                break 'windows;
            }
            let key = (spec.name().to_string(), window.label.clone());
            let cell = StoredCell {
                counts: c.counts,
                accuracy: c.accuracy,
            };
            let saved = match store.as_deref_mut() {
                Some(s) => s.save(&key.0, &key.1, &cell, registry),
                None => Ok(()),
            };
            match saved {
                Ok(()) => {
                    done.insert(key, cell);
                }
                Err(e) => {
                    if let Some(s) = store.as_deref_mut() {
                        // best effort: the journal may live on the same failing disk
                        let _ = s.record_failure(&key.0, &key.1, &e.to_string());
                    }
                    failed.insert(key, e.to_string());
                }
            }
            budget = budget.map(|b| b - 1);
        }
    }

    let mut cells = Vec::with_capacity(hdas.len() * windows.len());
    for spec in hdas {
        for window in windows {
            let key = (spec.name().to_string(), window.label.clone());
            cells.push(match (done.get(&key), failed.get(&key)) {
                (Some(stored), _) => finished_cell(&key.0, window, stored, registry, options.exclusion_threshold),
                (None, failure) => CellResult {
                    hda: key.0,
                    window: window.clone(),
                    status: failure.map_or(CellStatus::Pending, |e| CellStatus::Failed(e.clone())),
                    counts: None,
                    metrics: None,
                    accuracy: None,
                },
            });
        }
    }
    Ok(SweepResult {
        hdas: hdas.iter().map(|h| h.name().to_string()).collect(),
        windows: windows.to_vec(),
        cells,
        exclusion_threshold: options.exclusion_threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest_file(role: &str, path: &Path) -> Result<InputDigest> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub hda: String,
    pub window: String,
    pub status: CellStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    /// Hash of the input digests and the configuration echo.
    pub run_id: String,
    pub inputs: Vec<InputDigest>,
    pub span: DatasetSpan,
    pub windows: Vec<ObservationWindow>,
    pub hdas: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub ingest: IngestReport,
    pub started_at: String,
    pub finished_at: String,
    pub cells: Vec<CellEntry>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(Self::FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        store::write_atomic(&out_dir.join(Self::FILE), text.as_bytes())
    }
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub result: SweepResult,
    pub manifest: RunManifest,
    pub registry: TowerRegistry,
}

impl SweepRun {
    /// 0 when every cell finished, 2 when some failed or are still pending.
    pub fn exit_code(&self) -> i32 {
        if self.result.is_complete() {
            0
        } else {
            2
        }
    }
}

/// Fails unless `dir` can be created and written to.
pub fn check_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Sweep(e.to_string()))
}

fn load_truth(config: &SweepConfig) -> Result<Option<GroundTruthTable>> {
    config
        .truth
        .as_ref()
        .map(|p| {
            let f = File::open(p).map_err(|e| Error::io(p, e))?;
            GroundTruthTable::read_from(BufReader::new(f), config.migration_range)
        })
        .transpose()
}

/// Full file-to-reports run: checks the output directory, ingests, runs
/// the grid with persistence under `out/cells`, writes reports and the
/// manifest. `max_new_cells` simulates an interruption.
pub fn run_sweep(config: &SweepConfig, max_new_cells: Option<usize>) -> Result<SweepRun> {
    let started_at = chrono::Utc::now().to_rfc3339();
    check_writable(&config.out)?;
    let registry = TowerRegistry::load(&config.towers)?;
    let windows = config.windows()?;
    let truth = load_truth(config)?;
    let mut inputs = vec![digest_file("records", &config.records)?, digest_file("towers", &config.towers)?];
    if let Some(p) = &config.windows_file {
        inputs.push(digest_file("windows", p)?);
    }
    if let Some(p) = &config.truth {
        inputs.push(digest_file("truth", p)?);
    }

    let pool = thread_pool(config.workers)?;
    let (result, ingest_report) = pool.install(|| -> Result<_> {
        let ingested = ingest(
            &config.records,
            &registry,
            config.span,
            &IngestOptions {
                partitions: config.partitions,
                unknown_tower: config.unknown_tower,
                clock: config.clock,
                ..IngestOptions::default()
            },
        )?;
        if let Some(t) = &truth {
            for part in &ingested.partitions {
                if let Some(u) = part.users().find(|u| t.get(u.user).is_none()) {
                    return Err(Error::MissingTruth(u.user.0));
                }
            }
        }
        let mut store = CellStore::open(&config.out.join("cells"), config.resume)?;
        let result = run_grid(
            &ingested.partitions,
            &registry,
            &windows,
            &config.hdas,
            truth.as_ref(),
            &GridOptions {
                exclusion_threshold: config.exclusion_threshold,
                detect: DetectOptions {
                    min_qualifying: config.min_qualifying,
                },
                max_new_cells,
            },
            Some(&mut store),
        )?;
        Ok((result, ingested.report))
    })?;

    let outputs = emit_reports(&result, &registry, &config.out)?;
    let manifest = build_manifest(config, inputs, ingest_report, &result, outputs, started_at);
    manifest.write(&config.out)?;
    Ok(SweepRun {
        result,
        manifest,
        registry,
    })
}

fn build_manifest(
    config: &SweepConfig,
    inputs: Vec<InputDigest>,
    ingest: IngestReport,
    result: &SweepResult,
    outputs: Vec<String>,
    started_at: String,
) -> RunManifest {
    let echo: BTreeMap<String, String> =
        config.to_kv().entries().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let mut hasher = Sha256::new();
    for i in &inputs {
        hasher.update(i.sha256.as_bytes());
    }
    for (k, v) in &echo {
        if k != "workers" && k != "resume" {
            hasher.update(format!("{k}={v}\n").as_bytes());
        }
    }
    RunManifest {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        run_id: hex::encode(&hasher.finalize()[..8]),
        inputs,
        span: config.span,
        windows: result.windows.clone(),
        hdas: result.hdas.clone(),
        config: echo,
        ingest,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        cells: result
            .cells
            .iter()
            .map(|c| CellEntry {
                hda: c.hda.clone(),
                window: c.window.label.clone(),
                status: c.status.clone(),
            })
            .collect(),
        outputs,
    }
}

/// Rebuilds the result of a previous run from its manifest and stored cells
/// and rewrites the reports.
pub fn regenerate_reports(out_dir: &Path) -> Result<SweepRun> {
    let mut manifest = RunManifest::load(out_dir)?;
    let kv: KvConfig = manifest.config.iter().collect();
    let config = SweepConfig::from_kv(&kv)?;
    let registry = TowerRegistry::load(&config.towers)?;
    let hdas: Vec<HdaSpec> = manifest.hdas.iter().map(|h| h.parse()).collect::<Result<_>>()?;
    let store = CellStore::open(&out_dir.join("cells"), true)?;
    let done = store.load(&registry)?;
    let mut cells = Vec::new();
    for spec in &hdas {
        for window in &manifest.windows {
            let key = (spec.name().to_string(), window.label.clone());
            cells.push(match done.get(&key) {
                Some(stored) => finished_cell(&key.0, window, stored, &registry, config.exclusion_threshold),
                None => CellResult {
                    hda: key.0,
                    window: window.clone(),
                    status: CellStatus::Pending,
                    counts: None,
                    metrics: None,
                    accuracy: None,
                },
            });
        }
    }
    let result = SweepResult {
        hdas: manifest.hdas.clone(),
        windows: manifest.windows.clone(),
        cells,
        exclusion_threshold: config.exclusion_threshold,
    };
    manifest.outputs = emit_reports(&result, &registry, out_dir)?;
    manifest.cells = result
        .cells
        .iter()
        .map(|c| CellEntry {
            hda: c.hda.clone(),
            window: c.window.label.clone(),
            status: c.status.clone(),
        })
        .collect();
    manifest.write(out_dir)?;
    Ok(SweepRun {
        result,
        manifest,
        registry,
    })
}
