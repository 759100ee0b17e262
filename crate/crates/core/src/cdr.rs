//! Records, towers, the dataset span and ingestion of record files.
//!
//! Ingestion reads a delimited record file in newline-aligned blocks, parses
//! blocks concurrently and routes every accepted record to the partition
//! owning its user. Each partition is finally sorted into canonical order
//! (user, timestamp, tower) so the result does not depend on block size,
//! thread count or the order of lines in the file.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Offset, TimeZone, Timelike, Weekday};
use chrono_tz::Tz;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TowerId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for TowerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One user-initiated network event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CdrRecord {
    pub user: UserId,
    pub tower: TowerId,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub id: TowerId,
    pub lon: f64,
    pub lat: f64,
    /// Ground-truth resident population attributed to this tower's coverage area.
    pub population: f64,
}

/// Ordered set of towers. Registry order fixes the layout of every per-tower vector.
#[derive(Clone, Debug, Default)]
pub struct TowerRegistry {
    towers: Vec<Tower>,
    index: HashMap<TowerId, usize>,
}

impl TowerRegistry {
    pub fn new(towers: Vec<Tower>) -> Result<Self> {
        let mut index = HashMap::with_capacity(towers.len());
        for (pos, tower) in towers.iter().enumerate() {
            if !(tower.population.is_finite() && tower.population >= 0.0) {
                return Err(Error::Registry {
                    line: pos + 1,
                    reason: format!("tower {} has invalid population {}", tower.id, tower.population),
                });
            }
            if index.insert(tower.id, pos).is_some() {
                return Err(Error::Registry {
                    line: pos + 1,
                    reason: format!("duplicate tower id {}", tower.id),
                });
            }
        }
        Ok(TowerRegistry { towers, index })
    }

    pub fn len(&self) -> usize {
        self.towers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.towers.is_empty()
    }

    pub fn towers(&self) -> &[Tower] {
        &self.towers
    }

    pub fn position(&self, id: TowerId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: TowerId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: TowerId) -> Option<&Tower> {
        self.position(id).map(|pos| &self.towers[pos])
    }

    pub fn populations(&self) -> Vec<f64> {
        self.towers.iter().map(|t| t.population).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    /// Parses `tower_id,lon,lat,population` lines. A non-numeric first field
    /// on the first line marks a header.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut towers = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<registry>", e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if idx == 0 && fields[0].parse::<u32>().is_err() {
                continue;
            }
            let bad = |reason: &str| Error::Registry {
                line: idx + 1,
                reason: reason.to_string(),
            };
            if fields.len() != 4 {
                return Err(bad("expected tower_id,lon,lat,population"));
            }
            let id = fields[0].parse::<u32>().map_err(|_| bad("bad tower_id"))?;
            let lon = fields[1].parse::<f64>().map_err(|_| bad("bad lon"))?;
            let lat = fields[2].parse::<f64>().map_err(|_| bad("bad lat"))?;
            let population = fields[3].parse::<f64>().map_err(|_| bad("bad population"))?;
            towers.push(Tower {
                id: TowerId(id),
                lon,
                lat,
                population,
            });
        }
        Self::new(towers)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["tower_id", "lon", "lat", "population"])?;
        for t in &self.towers {
            out.write_record([
                t.id.to_string(),
                t.lon.to_string(),
                t.lat.to_string(),
                t.population.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<registry>", e))?;
        Ok(())
    }
}

/// Inclusive range of civil days covered by a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetSpan {
    first_day: NaiveDate,
    last_day: NaiveDate,
}

impl DatasetSpan {
    pub fn new(first_day: NaiveDate, last_day: NaiveDate) -> Result<Self> {
        if first_day > last_day {
            return Err(Error::InvalidSpan(format!("{first_day} is after {last_day}")));
        }
        Ok(DatasetSpan { first_day, last_day })
    }

    /// Parses `YYYY-MM-DD..YYYY-MM-DD`.
    pub fn parse(text: &str) -> Result<Self> {
        let (a, b) = text
            .split_once("..")
            .ok_or_else(|| Error::InvalidSpan(format!("expected FIRST..LAST, got {text:?}")))?;
        let parse = |s: &str| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map_err(|e| Error::InvalidSpan(format!("{s:?}: {e}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }

    pub fn first_day(&self) -> NaiveDate {
        self.first_day
    }

    pub fn last_day(&self) -> NaiveDate {
        self.last_day
    }

    pub fn day_count(&self) -> u32 {
        (self.last_day - self.first_day).num_days() as u32 + 1
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.first_day <= date && date <= self.last_day
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        self.first_day.iter_days().take(self.day_count() as usize)
    }
}

impl fmt::Display for DatasetSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first_day, self.last_day)
    }
}

/// Civil decomposition of an instant in the configured zone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LocalTime {
    pub date: NaiveDate,
    pub hour: u8,
    pub weekday: Weekday,
}

/// Converts between epoch seconds and civil time in one fixed zone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalClock {
    tz: Tz,
}

impl Default for LocalClock {
    fn default() -> Self {
        LocalClock {
            tz: chrono_tz::Europe::Paris,
        }
    }
}

impl LocalClock {
    pub fn new(tz: Tz) -> Self {
        LocalClock { tz }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        name.parse::<Tz>()
            .map(LocalClock::new)
            .map_err(|_| Error::Timezone(name.to_string()))
    }

    pub fn tz(&self) -> Tz {
        self.tz
    }

    pub fn name(&self) -> &'static str {
        self.tz.name()
    }

    pub fn derive_local_time(&self, timestamp: i64) -> LocalTime {
        let utc = chrono::DateTime::from_timestamp(timestamp, 0)
            .expect("timestamp outside representable range")
            .naive_utc();
        let offset = self.tz.offset_from_utc_datetime(&utc).fix();
        let local = utc + offset;
        LocalTime {
            date: local.date(),
            hour: local.hour() as u8,
            weekday: local.weekday(),
        }
    }

    /// Epoch seconds of a civil datetime. Ambiguous times (clock set back)
    /// resolve to the earlier instant; times skipped by a forward jump
    /// return `None`.
    pub fn to_epoch(&self, local: NaiveDateTime) -> Option<i64> {
        self.tz
            .from_local_datetime(&local)
            .earliest()
            .map(|dt| dt.timestamp())
    }
}

/// A record decomposed into the civil fields every HDA filter works on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LocalRecord {
    pub user: UserId,
    pub timestamp: i64,
    pub tower: TowerId,
    /// Days since 0001-01-01 (proleptic Gregorian, day 1).
    pub day: i32,
    pub hour: u8,
    /// 0 = Monday .. 6 = Sunday.
    pub weekday: u8,
}

impl LocalRecord {
    pub fn new(record: CdrRecord, local: LocalTime) -> Self {
        LocalRecord {
            user: record.user,
            timestamp: record.timestamp,
            tower: record.tower,
            day: local.date.num_days_from_ce(),
            hour: local.hour,
            weekday: local.weekday.num_days_from_monday() as u8,
        }
    }

    pub fn date(&self) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(self.day).expect("day index in range")
    }

    pub fn weekday(&self) -> Weekday {
        Weekday::try_from(self.weekday).expect("weekday index in range")
    }

    pub fn record(&self) -> CdrRecord {
        CdrRecord {
            user: self.user,
            tower: self.tower,
            timestamp: self.timestamp,
        }
    }

    fn canonical_key(&self) -> (UserId, i64, TowerId) {
        (self.user, self.timestamp, self.tower)
    }
}

/// All records of the users hashed to one partition, grouped per user and
/// sorted by (user, timestamp, tower).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserPartition {
    index: usize,
    records: Vec<LocalRecord>,
    users: Vec<(UserId, Range<usize>)>,
}

/// Borrowed view of one user's records.
#[derive(Clone, Copy, Debug)]
pub struct UserTrace<'a> {
    pub user: UserId,
    pub records: &'a [LocalRecord],
}

impl UserPartition {
    /// Builds a partition from records in any order.
    pub fn from_records(index: usize, mut records: Vec<LocalRecord>) -> Self {
        records.sort_unstable_by_key(LocalRecord::canonical_key);
        let mut users = Vec::new();
        let mut start = 0;
        for i in 1..=records.len() {
            if i == records.len() || records[i].user != records[start].user {
                users.push((records[start].user, start..i));
                start = i;
            }
        }
        UserPartition {
            index,
            records,
            users,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn records(&self) -> &[LocalRecord] {
        &self.records
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn users(&self) -> impl Iterator<Item = UserTrace<'_>> + '_ {
        self.users.iter().map(|(user, range)| UserTrace {
            user: *user,
            records: &self.records[range.clone()],
        })
    }
}

/// Partition owning `user` among `partitions` partitions.
pub fn partition_of(user: UserId, partitions: usize) -> usize {
    (splitmix64(user.0) % partitions as u64) as usize
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnknownTowerPolicy {
    #[default]
    Skip,
    FailFast,
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub partitions: usize,
    pub unknown_tower: UnknownTowerPolicy,
    pub clock: LocalClock,
    /// Approximate size of the blocks handed to parser threads.
    pub block_bytes: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            partitions: 1,
            unknown_tower: UnknownTowerPolicy::Skip,
            clock: LocalClock::default(),
            block_bytes: 4 << 20,
        }
    }
}

/// Line accounting for one ingestion. A detected header line is not counted
/// in `total_lines`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub header: bool,
    pub total_lines: u64,
    pub accepted: u64,
    pub rejected_malformed: u64,
    pub rejected_unknown_tower: u64,
    pub rejected_out_of_span: u64,
    pub distinct_users: u64,
    pub partitions: usize,
}

impl IngestReport {
    pub fn rejected(&self) -> u64 {
        self.rejected_malformed + self.rejected_unknown_tower + self.rejected_out_of_span
    }

    fn absorb(&mut self, other: &IngestReport) {
        self.total_lines += other.total_lines;
        self.accepted += other.accepted;
        self.rejected_malformed += other.rejected_malformed;
        self.rejected_unknown_tower += other.rejected_unknown_tower;
        self.rejected_out_of_span += other.rejected_out_of_span;
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "header={}", self.header)?;
        writeln!(f, "total_lines={}", self.total_lines)?;
        writeln!(f, "accepted={}", self.accepted)?;
        writeln!(f, "rejected_malformed={}", self.rejected_malformed)?;
        writeln!(f, "rejected_unknown_tower={}", self.rejected_unknown_tower)?;
        writeln!(f, "rejected_out_of_span={}", self.rejected_out_of_span)?;
        writeln!(f, "distinct_users={}", self.distinct_users)?;
        writeln!(f, "partitions={}", self.partitions)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub partitions: Vec<UserPartition>,
    pub report: IngestReport,
}

impl Ingested {
    pub fn record_count(&self) -> usize {
        self.partitions.iter().map(UserPartition::record_count).sum()
    }

    pub fn user_count(&self) -> usize {
        self.partitions.iter().map(UserPartition::user_count).sum()
    }
}

#[derive(Debug)]
enum LineOutcome {
    Accepted(LocalRecord),
    Header,
    Malformed,
    UnknownTower(TowerId),
    OutOfSpan,
}

struct LineParser<'a> {
    registry: &'a TowerRegistry,
    span: DatasetSpan,
    clock: LocalClock,
}

impl LineParser<'_> {
    fn parse(&self, raw: &[u8], first_line: bool) -> LineOutcome {
        let Ok(line) = std::str::from_utf8(raw) else {
            return LineOutcome::Malformed;
        };
        let line = line.trim();
        let first = line.split(',').next().unwrap_or("").trim();
        if first_line && !first.is_empty() && first.parse::<u64>().is_err() {
            return LineOutcome::Header;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(user), Some(tower), Some(ts), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return LineOutcome::Malformed;
        };
        let Ok(user) = user.parse::<u64>() else {
            return LineOutcome::Malformed;
        };
        let Ok(tower) = tower.parse::<u32>() else {
            return LineOutcome::Malformed;
        };
        let Some(timestamp) = self.parse_timestamp(ts) else {
            return LineOutcome::Malformed;
        };
        let tower = TowerId(tower);
        if !self.registry.contains(tower) {
            return LineOutcome::UnknownTower(tower);
        }
        if chrono::DateTime::from_timestamp(timestamp, 0).is_none() {
            return LineOutcome::Malformed;
        }
        let local = self.clock.derive_local_time(timestamp);
        if !self.span.contains(local.date) {
            return LineOutcome::OutOfSpan;
        }
        LineOutcome::Accepted(LocalRecord::new(
            CdrRecord {
                user: UserId(user),
                tower,
                timestamp,
            },
            local,
        ))
    }

    fn parse_timestamp(&self, field: &str) -> Option<i64> {
        if let Ok(epoch) = field.parse::<i64>() {
            return Some(epoch);
        }
        let local = NaiveDateTime::parse_from_str(field, "%Y-%m-%dT%H:%M:%S").ok()?;
        self.clock.to_epoch(local)
    }
}

struct Block {
    first_line_no: usize,
    bytes: Vec<u8>,
}

struct BlockOutput {
    per_partition: Vec<Vec<LocalRecord>>,
    report: IngestReport,
    first_unknown: Option<(usize, TowerId)>,
}

fn parse_block(parser: &LineParser<'_>, block: &Block, partitions: usize) -> BlockOutput {
    let mut out = BlockOutput {
        per_partition: vec![Vec::new(); partitions],
        report: IngestReport::default(),
        first_unknown: None,
    };
    let body = block.bytes.strip_suffix(b"\n").unwrap_or(&block.bytes);
    if block.bytes.is_empty() {
        return out;
    }
    for (offset, raw) in body.split(|&b| b == b'\n').enumerate() {
        let line_no = block.first_line_no + offset;
        match parser.parse(raw, line_no == 1) {
            LineOutcome::Header => out.report.header = true,
            LineOutcome::Accepted(rec) => {
                out.report.total_lines += 1;
                out.report.accepted += 1;
                out.per_partition[partition_of(rec.user, partitions)].push(rec);
            }
            LineOutcome::Malformed => {
                out.report.total_lines += 1;
                out.report.rejected_malformed += 1;
            }
            LineOutcome::UnknownTower(tower) => {
                out.report.total_lines += 1;
                out.report.rejected_unknown_tower += 1;
                out.first_unknown.get_or_insert((line_no, tower));
            }
            LineOutcome::OutOfSpan => {
                out.report.total_lines += 1;
                out.report.rejected_out_of_span += 1;
            }
        }
    }
    out
}

/// Reads a records file and partitions it by user.
pub fn ingest(
    path: &Path,
    registry: &TowerRegistry,
    span: DatasetSpan,
    options: &IngestOptions,
) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, registry, span, options).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn ingest_reader<R: Read>(
    reader: R,
    registry: &TowerRegistry,
    span: DatasetSpan,
    options: &IngestOptions,
) -> Result<Ingested> {
    if options.partitions == 0 {
        return Err(Error::ZeroPartitions);
    }
    let parser = LineParser {
        registry,
        span,
        clock: options.clock,
    };
    let parts = options.partitions;
    let mut buckets: Vec<Vec<LocalRecord>> = vec![Vec::new(); parts];
    let mut report = IngestReport::default();

    let batch_len = rayon::current_num_threads().max(1) * 2;
    let mut blocks = BlockReader::new(reader, options.block_bytes.max(1));
    loop {
        let mut batch = Vec::with_capacity(batch_len);
        while batch.len() < batch_len {
            match blocks.next_block()? {
                Some(b) => batch.push(b),
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        let outputs: Vec<BlockOutput> = batch
            .par_iter()
            .map(|block| parse_block(&parser, block, parts))
            .collect();
        for out in outputs {
            if options.unknown_tower == UnknownTowerPolicy::FailFast {
                if let Some((line, tower)) = out.first_unknown {
                    return Err(Error::UnknownTower { line, tower });
                }
            }
            report.header |= out.report.header;
            report.absorb(&out.report);
            for (bucket, recs) in buckets.iter_mut().zip(out.per_partition) {
                bucket.extend(recs);
            }
        }
    }

    let partitions: Vec<UserPartition> = buckets
        .into_par_iter()
        .enumerate()
        .map(|(idx, recs)| UserPartition::from_records(idx, recs))
        .collect();
    report.distinct_users = partitions.iter().map(|p| p.user_count() as u64).sum();
    report.partitions = parts;
    Ok(Ingested { partitions, report })
}

/// Splits a byte stream into newline-terminated blocks of roughly equal size.
struct BlockReader<R> {
    inner: R,
    block_bytes: usize,
    carry: Vec<u8>,
    next_line_no: usize,
    eof: bool,
}

impl<R: Read> BlockReader<R> {
    fn new(inner: R, block_bytes: usize) -> Self {
        BlockReader {
            inner,
            block_bytes,
            carry: Vec::new(),
            next_line_no: 1,
            eof: false,
        }
    }

    fn next_block(&mut self) -> Result<Option<Block>> {
        let mut buf = std::mem::take(&mut self.carry);
        while !self.eof && buf.len() < self.block_bytes {
            let start = buf.len();
            buf.resize(self.block_bytes, 0);
            let n = loop {
                match self.inner.read(&mut buf[start..]) {
                    Ok(n) => break n,
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(Error::io("<records>", e)),
                }
            };
            buf.truncate(start + n);
            if n == 0 {
                self.eof = true;
            }
        }
        if buf.is_empty() {
            return Ok(None);
        }
        if !self.eof {
            match buf.iter().rposition(|&b| b == b'\n') {
                Some(pos) => self.carry = buf.split_off(pos + 1),
                // single line longer than a block: keep reading
                None => {
                    self.carry = buf;
                    return self.next_block_grow();
                }
            }
        }
        let first_line_no = self.next_line_no;
        let mut lines = buf.iter().filter(|&&b| b == b'\n').count();
        if buf.last() != Some(&b'\n') {
            lines += 1;
        }
        self.next_line_no += lines;
        Ok(Some(Block {
            first_line_no,
            bytes: buf,
        }))
    }

    fn next_block_grow(&mut self) -> Result<Option<Block>> {
        self.block_bytes *= 2;
        self.next_block()
    }
}
