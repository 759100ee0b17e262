//! Home detection from call detail records and evaluation against census
//! population at tower level.

pub mod cdr;
pub mod error;
pub mod hda;
pub mod kv;
pub mod metrics;
pub mod sweep;
pub mod synth;
pub mod windows;

pub use cdr::{
    ingest, ingest_reader, CdrRecord, DatasetSpan, IngestOptions, IngestReport, Ingested, LocalClock, LocalRecord,
    LocalTime, Tower, TowerId, TowerRegistry, UnknownTowerPolicy, UserId, UserPartition,
};
pub use error::{Error, Result};
pub use hda::{detect_home, DetectOptions, HdaSpec, HomeAssignment, HomeDecision, HomeDetector, TowerVectors};
pub use metrics::{decile_summary, exclusion_policy, log_ratio, pearson_r, LogRatio, UndefinedCorrelation};
pub use windows::{generate_windows, DurationClass, ObservationWindow};
