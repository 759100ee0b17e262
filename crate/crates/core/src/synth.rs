//! Synthetic towers, populations and CDR streams with known homes.
//!
//! Randomness comes from ChaCha8 seeded once from `SynthConfig::seed`.
//! Stream 0 builds the tower layout; user `i` draws everything from stream
//! `i + 1`, consuming a fixed number of values per user profile and per
//! event regardless of which branch is taken. A user's trace therefore
//! depends only on the seed, the world and that user's own stream, so
//! changing the migration fraction or adding users leaves other traces
//! untouched.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Days, NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdr::{CdrRecord, DatasetSpan, LocalClock, Tower, TowerId, TowerRegistry, UserId};
use crate::error::{Error, Result};
use crate::hda::HomeAssignment;
use crate::kv::KvConfig;
use crate::windows::ObservationWindow;

/// Local hours `[20, 24) ∪ [0, 8)` where events lean towards the home tower.
pub const NIGHT_START: u8 = 20;
pub const NIGHT_END: u8 = 8;

// Relative call volume per local hour.
const HOUR_PROFILE: [f64; 24] = [
    1.0, 0.5, 0.3, 0.2, 0.2, 0.3, 0.8, 2.0, 3.0, 4.0, 4.5, 4.5, 5.0, 4.5, 4.5, 4.5, 5.0, 5.5, 6.0, 6.0, 5.5, 4.5,
    3.0, 2.0,
];

const LON_RANGE: (f64, f64) = (-4.5, 7.5);
const LAT_RANGE: (f64, f64) = (42.5, 51.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TouristicTowers {
    Explicit(Vec<TowerId>),
    /// Pick this many towers among the less populated half of the registry.
    Count(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationConfig {
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub fraction: f64,
    pub towers: TouristicTowers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_towers: usize,
    pub n_population: u64,
    pub market_share: f64,
    pub span: DatasetSpan,
    pub clock: LocalClock,
    /// Mean records per user per day; daily counts are geometric on {0, 1, ..}.
    pub daily_event_rate: f64,
    pub home_call_share_night: f64,
    pub home_call_share_day: f64,
    pub work_call_share_day: f64,
    /// Spread of the per-user exponent applied to the three shares above.
    pub share_jitter: f64,
    pub neighbor_count: usize,
    pub urban_clusters: usize,
    pub migration: Option<MigrationConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_towers: 200,
            n_population: 20_000,
            market_share: 0.28,
            span: DatasetSpan::parse("2007-05-13..2007-10-13").unwrap(),
            clock: LocalClock::default(),
            daily_event_rate: 4.5,
            home_call_share_night: 0.7,
            home_call_share_day: 0.25,
            work_call_share_day: 0.5,
            share_jitter: 0.7,
            neighbor_count: 6,
            urban_clusters: 5,
            migration: None,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Synth(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        unit_interval("market_share", self.market_share)?;
        unit_interval("home_call_share_night", self.home_call_share_night)?;
        unit_interval("home_call_share_day", self.home_call_share_day)?;
        unit_interval("work_call_share_day", self.work_call_share_day)?;
        if self.home_call_share_day + self.work_call_share_day > 1.0 + 1e-12 {
            return Err(Error::Synth("home_call_share_day + work_call_share_day exceeds 1".into()));
        }
        if self.n_towers == 0 {
            return Err(Error::Synth("n_towers must be positive".into()));
        }
        if !(self.daily_event_rate >= 0.0 && self.daily_event_rate.is_finite()) {
            return Err(Error::Synth("daily_event_rate must be a non-negative number".into()));
        }
        if !(self.share_jitter >= 0.0 && self.share_jitter.is_finite()) {
            return Err(Error::Synth("share_jitter must be non-negative".into()));
        }
        if let Some(m) = &self.migration {
            unit_interval("migration_fraction", m.fraction)?;
            if m.first_day > m.last_day || !self.span.contains(m.first_day) || !self.span.contains(m.last_day) {
                return Err(Error::Synth(format!(
                    "migration range {}..{} must be a valid range inside {}",
                    m.first_day, m.last_day, self.span
                )));
            }
            let empty = match &m.towers {
                TouristicTowers::Explicit(t) => t.is_empty(),
                TouristicTowers::Count(c) => *c == 0,
            };
            if empty && m.fraction > 0.0 {
                return Err(Error::Synth("migration fraction > 0 but no touristic towers".into()));
            }
        }
        Ok(())
    }

    /// Subscriber count, `floor(market_share * n_population)`.
    pub fn subscriber_count(&self) -> u64 {
        // the epsilon absorbs binary representation error of decimal shares
        (self.market_share * self.n_population as f64 + 1e-9).floor() as u64
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = SynthConfig::default();
        if let Some(v) = kv.parsed("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parsed("n_towers")? {
            c.n_towers = v;
        }
        if let Some(v) = kv.parsed("n_population")? {
            c.n_population = v;
        }
        if let Some(v) = kv.parsed("market_share")? {
            c.market_share = v;
        }
        if let Some(v) = kv.get("span") {
            c.span = DatasetSpan::parse(v)?;
        }
        if let Some(v) = kv.get("timezone") {
            c.clock = LocalClock::from_name(v)?;
        }
        if let Some(v) = kv.parsed("daily_event_rate")? {
            c.daily_event_rate = v;
        }
        if let Some(v) = kv.parsed("home_call_share_night")? {
            c.home_call_share_night = v;
        }
        if let Some(v) = kv.parsed("home_call_share_day")? {
            c.home_call_share_day = v;
        }
        if let Some(v) = kv.parsed("work_call_share_day")? {
            c.work_call_share_day = v;
        }
        if let Some(v) = kv.parsed("share_jitter")? {
            c.share_jitter = v;
        }
        if let Some(v) = kv.parsed("neighbor_count")? {
            c.neighbor_count = v;
        }
        if let Some(v) = kv.parsed("urban_clusters")? {
            c.urban_clusters = v;
        }
        if let Some(range) = kv.get("migration_range") {
            let r = DatasetSpan::parse(range)?;
            let towers = match (kv.get("migration_towers"), kv.parsed::<usize>("migration_tower_count")?) {
                (Some(list), _) => TouristicTowers::Explicit(
                    list.split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| {
                            s.trim()
                                .parse::<u32>()
                                .map(TowerId)
                                .map_err(|_| Error::Config(format!("migration_towers: bad tower id {s:?}")))
                        })
                        .collect::<Result<_>>()?,
                ),
                (None, Some(n)) => TouristicTowers::Count(n),
                (None, None) => TouristicTowers::Count(5),
            };
            c.migration = Some(MigrationConfig {
                first_day: r.first_day(),
                last_day: r.last_day(),
                fraction: kv.parsed("migration_fraction")?.unwrap_or(0.3),
                towers,
            });
        }
        c.validate()?;
        Ok(c)
    }

    /// Every effective setting, defaults included, as key=value pairs.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("seed", self.seed);
        kv.set("n_towers", self.n_towers);
        kv.set("n_population", self.n_population);
        kv.set("market_share", self.market_share);
        kv.set("span", self.span);
        kv.set("timezone", self.clock.name());
        kv.set("daily_event_rate", self.daily_event_rate);
        kv.set("daily_count_distribution", "geometric");
        kv.set("home_call_share_night", self.home_call_share_night);
        kv.set("home_call_share_day", self.home_call_share_day);
        kv.set("work_call_share_day", self.work_call_share_day);
        kv.set("share_jitter", self.share_jitter);
        kv.set("neighbor_count", self.neighbor_count);
        kv.set("urban_clusters", self.urban_clusters);
        kv.set("night_hours", format!("{NIGHT_START}-{NIGHT_END}"));
        if let Some(m) = &self.migration {
            kv.set("migration_range", format!("{}..{}", m.first_day, m.last_day));
            kv.set("migration_fraction", m.fraction);
            match &m.towers {
                TouristicTowers::Explicit(t) => {
                    let ids: Vec<String> = t.iter().map(|t| t.to_string()).collect();
                    kv.set("migration_towers", ids.join(","));
                }
                TouristicTowers::Count(n) => kv.set("migration_tower_count", n),
            }
        }
        kv
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub user: UserId,
    pub home: TowerId,
    pub work: TowerId,
    pub migration: Option<TowerId>,
}

/// Known homes of synthetic users. Migrants are away for the whole
/// migration range.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthTable {
    rows: Vec<TruthRow>,
    by_user: BTreeMap<UserId, usize>,
    migration_range: Option<(NaiveDate, NaiveDate)>,
}

impl GroundTruthTable {
    pub fn new(rows: Vec<TruthRow>, migration_range: Option<(NaiveDate, NaiveDate)>) -> Self {
        let by_user = rows.iter().enumerate().map(|(i, r)| (r.user, i)).collect();
        GroundTruthTable {
            rows,
            by_user,
            migration_range,
        }
    }

    pub fn rows(&self) -> &[TruthRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, user: UserId) -> Option<&TruthRow> {
        self.by_user.get(&user).map(|&i| &self.rows[i])
    }

    pub fn migration_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.migration_range
    }

    /// Whether `user` is away at some point during `window`.
    pub fn migrated_during(&self, user: UserId, window: &ObservationWindow) -> bool {
        match (self.get(user).and_then(|r| r.migration), self.migration_range) {
            (Some(_), Some((a, b))) => a <= window.last_day && window.first_day <= b,
            _ => false,
        }
    }

    /// Writes `user_id,home_tower,work_tower,migration_tower`.
    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["user_id", "home_tower", "work_tower", "migration_tower"])?;
        for r in &self.rows {
            out.write_record([
                r.user.to_string(),
                r.home.to_string(),
                r.work.to_string(),
                r.migration.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<truth>", e))?;
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(reader: R, migration_range: Option<(NaiveDate, NaiveDate)>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || Error::Config(format!("truth.csv row {}: malformed", i + 2));
            if rec.len() != 4 {
                return Err(bad());
            }
            let tower = |s: &str| s.trim().parse::<u32>().map(TowerId).map_err(|_| bad());
            rows.push(TruthRow {
                user: UserId(rec[0].trim().parse().map_err(|_| bad())?),
                home: tower(&rec[1])?,
                work: tower(&rec[2])?,
                migration: if rec[3].trim().is_empty() {
                    None
                } else {
                    Some(tower(&rec[3])?)
                },
            });
        }
        Ok(Self::new(rows, migration_range))
    }
}

#[derive(Clone, Debug)]
struct UserProfile {
    truth: TruthRow,
    night_home: f64,
    day_home: f64,
    day_work: f64,
}

/// A generated world: towers, populations and user profiles. Records are
/// produced on demand per user.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    config: SynthConfig,
    registry: TowerRegistry,
    neighbors: Vec<Vec<usize>>,
    touristic: Vec<usize>,
    users: Vec<UserProfile>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Index into `cumulative` (non-decreasing, last element = total) for a uniform draw.
fn pick_weighted(cumulative: &[f64], u: f64) -> usize {
    let target = u * cumulative[cumulative.len() - 1];
    cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1)
}

fn user_rng(seed: u64, user_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_index as u64 + 1);
    rng
}

impl Synthesizer {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);

        let n = config.n_towers;
        let centers: Vec<(f64, f64)> = (0..config.urban_clusters.max(1))
            .map(|_| {
                (
                    LON_RANGE.0 + rng.gen::<f64>() * (LON_RANGE.1 - LON_RANGE.0),
                    LAT_RANGE.0 + rng.gen::<f64>() * (LAT_RANGE.1 - LAT_RANGE.0),
                )
            })
            .collect();
        let mut coords = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let urban = config.urban_clusters > 0 && rng.gen::<f64>() < 0.6;
            let (lon, lat) = if urban {
                let (clon, clat) = centers[rng.gen_range(0..centers.len())];
                (clon + 0.15 * gaussian(&mut rng), clat + 0.15 * gaussian(&mut rng))
            } else {
                (
                    LON_RANGE.0 + rng.gen::<f64>() * (LON_RANGE.1 - LON_RANGE.0),
                    LAT_RANGE.0 + rng.gen::<f64>() * (LAT_RANGE.1 - LAT_RANGE.0),
                )
            };
            coords.push((lon, lat));
            weights.push((0.8 * gaussian(&mut rng)).exp() * if urban { 4.0 } else { 1.0 });
        }

        let populations = allocate_largest_remainder(config.n_population, &weights);
        let towers: Vec<Tower> = (0..n)
            .map(|i| Tower {
                id: TowerId(i as u32 + 1),
                lon: coords[i].0,
                lat: coords[i].1,
                population: populations[i] as f64,
            })
            .collect();
        let registry = TowerRegistry::new(towers)?;

        let neighbors: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&coords, i, config.neighbor_count))
            .collect();

        let touristic = match config.migration.as_ref().map(|m| &m.towers) {
            None => Vec::new(),
            Some(TouristicTowers::Explicit(ids)) => ids
                .iter()
                .map(|id| {
                    registry
                        .position(*id)
                        .ok_or_else(|| Error::Synth(format!("touristic tower {id} is not in the registry")))
                })
                .collect::<Result<_>>()?,
            Some(TouristicTowers::Count(k)) => {
                let mut by_pop: Vec<usize> = (0..n).collect();
                by_pop.sort_by_key(|&i| (populations[i], i));
                let mut pool: Vec<usize> = by_pop[..n.div_ceil(2)].to_vec();
                if *k > pool.len() {
                    return Err(Error::Synth(format!(
                        "migration_tower_count {k} exceeds the {} low-population candidates",
                        pool.len()
                    )));
                }
                let mut chosen = Vec::with_capacity(*k);
                for _ in 0..*k {
                    let idx = rng.gen_range(0..pool.len());
                    chosen.push(pool.swap_remove(idx));
                }
                chosen.sort_unstable();
                chosen
            }
        };

        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &p in &populations {
            acc += p as f64;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            // nobody lives anywhere: place subscribers uniformly
            cumulative = (1..=n).map(|i| i as f64).collect();
        }

        let fraction = config.migration.as_ref().map_or(0.0, |m| m.fraction);
        let users: Vec<UserProfile> = (0..config.subscriber_count() as usize)
            .into_par_iter()
            .map(|idx| {
                let mut rng = user_rng(config.seed, idx);
                let u_home: f64 = rng.gen();
                let u_work: f64 = rng.gen();
                let u_share: f64 = rng.gen();
                let u_migrant: f64 = rng.gen();
                let u_dest: f64 = rng.gen();

                let home = pick_weighted(&cumulative, u_home);
                let near = &neighbors[home];
                let work = if near.is_empty() {
                    home
                } else {
                    // busier neighbours attract more workers
                    let mut cum = Vec::with_capacity(near.len());
                    let mut acc = 0.0;
                    for &j in near {
                        acc += populations[j] as f64 + 1.0;
                        cum.push(acc);
                    }
                    near[pick_weighted(&cum, u_work)]
                };
                let k = (config.share_jitter * (2.0 * u_share - 1.0)).exp();
                let night_home = config.home_call_share_night.powf(k);
                let mut day_home = config.home_call_share_day.powf(k);
                let mut day_work = config.work_call_share_day.powf(k);
                let day_total = day_home + day_work;
                if day_total > 1.0 {
                    day_home /= day_total;
                    day_work /= day_total;
                }
                let migration = (u_migrant < fraction && !touristic.is_empty()).then(|| {
                    let t = ((u_dest * touristic.len() as f64) as usize).min(touristic.len() - 1);
                    registry.towers()[touristic[t]].id
                });
                let tower_id = |i: usize| registry.towers()[i].id;
                UserProfile {
                    truth: TruthRow {
                        user: UserId(idx as u64 + 1),
                        home: tower_id(home),
                        work: tower_id(work),
                        migration,
                    },
                    night_home,
                    day_home,
                    day_work,
                }
            })
            .collect();

        Ok(Synthesizer {
            config,
            registry,
            neighbors,
            touristic,
            users,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn registry(&self) -> &TowerRegistry {
        &self.registry
    }

    pub fn touristic_towers(&self) -> Vec<TowerId> {
        self.touristic.iter().map(|&i| self.registry.towers()[i].id).collect()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn truth(&self) -> GroundTruthTable {
        GroundTruthTable::new(
            self.users.iter().map(|u| u.truth.clone()).collect(),
            self.config.migration.as_ref().map(|m| (m.first_day, m.last_day)),
        )
    }

    /// Records of one user, sorted by (timestamp, tower).
    pub fn user_records(&self, user_index: usize) -> Vec<CdrRecord> {
        let profile = &self.users[user_index];
        let cfg = &self.config;
        let mut rng = user_rng(cfg.seed, user_index);
        // skip the five profile draws
        for _ in 0..5 {
            let _: f64 = rng.gen();
        }
        let pos = |id: TowerId| self.registry.position(id).expect("registered tower");
        let home = pos(profile.truth.home);
        let work = pos(profile.truth.work);
        let away = profile.truth.migration.map(pos);
        let migration = cfg.migration.as_ref().map(|m| (m.first_day, m.last_day));

        let mut hour_cum = [0.0; 24];
        let mut acc = 0.0;
        for (h, w) in HOUR_PROFILE.iter().enumerate() {
            acc += w;
            hour_cum[h] = acc;
        }
        let stop = 1.0 / (1.0 + cfg.daily_event_rate);
        let log_continue = (1.0 - stop).ln();

        let mut out = Vec::new();
        for date in cfg.span.days() {
            let u_count: f64 = rng.gen();
            let count = if cfg.daily_event_rate <= 0.0 {
                0
            } else {
                ((1.0 - u_count).ln() / log_continue).floor() as u64
            };
            let migrating = match (away, migration) {
                (Some(_), Some((a, b))) => a <= date && date <= b,
                _ => false,
            };
            let base = if migrating { away.unwrap() } else { home };
            let work_here = if migrating { base } else { work };
            for _ in 0..count {
                let u_hour: f64 = rng.gen();
                let u_second: f64 = rng.gen();
                let u_choice: f64 = rng.gen();
                let u_near: f64 = rng.gen();

                let hour = pick_weighted(&hour_cum, u_hour) as u32;
                let second = ((u_second * 3600.0) as u32).min(3599);
                let near = &self.neighbors[base];
                let neighbor = if near.is_empty() {
                    base
                } else {
                    near[((u_near * near.len() as f64) as usize).min(near.len() - 1)]
                };
                let night = hour >= u32::from(NIGHT_START) || hour < u32::from(NIGHT_END);
                let tower = if night {
                    if u_choice < profile.night_home {
                        base
                    } else {
                        neighbor
                    }
                } else if u_choice < profile.day_work {
                    work_here
                } else if u_choice < profile.day_work + profile.day_home {
                    base
                } else {
                    neighbor
                };
                let local = date.and_time(NaiveTime::from_hms_opt(hour, second / 60, second % 60).unwrap());
                let timestamp = cfg
                    .clock
                    .to_epoch(local)
                    .or_else(|| cfg.clock.to_epoch(local + chrono::Duration::hours(1)))
                    .expect("local time resolvable after skipping a DST gap");
                out.push(CdrRecord {
                    user: profile.truth.user,
                    tower: self.registry.towers()[tower].id,
                    timestamp,
                });
            }
        }
        out.sort_unstable_by_key(|r| (r.timestamp, r.tower));
        out
    }

    /// All records in user order. Equal to concatenating [`user_records`](Self::user_records).
    pub fn records(&self) -> Vec<CdrRecord> {
        (0..self.users.len())
            .into_par_iter()
            .flat_map_iter(|i| self.user_records(i))
            .collect()
    }

    /// Writes `user_id,tower_id,timestamp` lines with epoch-second timestamps.
    pub fn write_records<W: Write>(&self, writer: W) -> Result<u64> {
        let mut out = BufWriter::new(writer);
        let io = |e| Error::io("<records>", e);
        writeln!(out, "user_id,tower_id,timestamp").map_err(io)?;
        let mut written = 0u64;
        let chunk = 512;
        for start in (0..self.users.len()).step_by(chunk) {
            let end = (start + chunk).min(self.users.len());
            let texts: Vec<String> = (start..end)
                .into_par_iter()
                .map(|i| {
                    let mut s = String::new();
                    for r in self.user_records(i) {
                        s.push_str(&format!("{},{},{}\n", r.user, r.tower, r.timestamp));
                    }
                    s
                })
                .collect();
            for t in texts {
                written += t.bytes().filter(|&b| b == b'\n').count() as u64;
                out.write_all(t.as_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)?;
        Ok(written)
    }

    /// Writes `records.csv`, `towers.csv`, `truth.csv` and `synth.conf` into `dir`.
    pub fn write_dataset(&self, dir: &Path) -> Result<SynthPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths::in_dir(dir);
        let create = |p: &Path| File::create(p).map_err(|e| Error::io(p, e));
        self.write_records(create(&paths.records)?)?;
        self.registry.write_to(BufWriter::new(create(&paths.towers)?))?;
        self.truth().write_to(BufWriter::new(create(&paths.truth)?))?;
        fs::write(&paths.config, self.config.to_kv().to_string()).map_err(|e| Error::io(&paths.config, e))?;
        Ok(paths)
    }
}

#[derive(Clone, Debug)]
pub struct SynthPaths {
    pub records: std::path::PathBuf,
    pub towers: std::path::PathBuf,
    pub truth: std::path::PathBuf,
    pub config: std::path::PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        SynthPaths {
            records: dir.join("records.csv"),
            towers: dir.join("towers.csv"),
            truth: dir.join("truth.csv"),
            config: dir.join("synth.conf"),
        }
    }
}

/// Generator output held in memory.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub registry: TowerRegistry,
    pub truth: GroundTruthTable,
    pub records: Vec<CdrRecord>,
}

pub fn generate(config: SynthConfig) -> Result<SynthOutput> {
    let synth = Synthesizer::new(config)?;
    Ok(SynthOutput {
        records: synth.records(),
        truth: synth.truth(),
        registry: synth.registry.clone(),
    })
}

fn allocate_largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut alloc: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        alloc[i] += 1;
    }
    alloc
}

fn nearest(coords: &[(f64, f64)], i: usize, k: usize) -> Vec<usize> {
    let (lon, lat) = coords[i];
    let scale = lat.to_radians().cos();
    let mut d: Vec<(f64, usize)> = coords
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &(lo, la))| {
            let dx = (lo - lon) * scale;
            let dy = la - lat;
            (dx * dx + dy * dy, j)
        })
        .collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, j)| j).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: u64,
    pub total: u64,
}

impl Tally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += u64::from(hit);
    }
}

/// Individual-level accuracy of one HDA on one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub hda: String,
    pub window: String,
    pub overall: Tally,
    /// Users who are away during some part of the window.
    pub migrants: Tally,
    pub non_migrants: Tally,
}

/// Compares detected homes with true (pre-migration) homes, one report per
/// HDA in order of first appearance. Users without a detected home count as misses.
pub fn score_against_truth(
    assignments: &[HomeAssignment],
    truth: &GroundTruthTable,
    window: &ObservationWindow,
) -> Result<Vec<AccuracyReport>> {
    let mut reports: Vec<AccuracyReport> = Vec::new();
    for a in assignments {
        let row = truth.get(a.user).ok_or(Error::MissingTruth(a.user.0))?;
        let idx = match reports.iter().position(|r| r.hda == a.hda) {
            Some(i) => i,
            None => {
                reports.push(AccuracyReport {
                    hda: a.hda.clone(),
                    window: window.label.clone(),
                    overall: Tally::default(),
                    migrants: Tally::default(),
                    non_migrants: Tally::default(),
                });
                reports.len() - 1
            }
        };
        let hit = a.home == Some(row.home);
        let r = &mut reports[idx];
        r.overall.add(hit);
        if truth.migrated_during(a.user, window) {
            r.migrants.add(hit);
        } else {
            r.non_migrants.add(hit);
        }
    }
    Ok(reports)
}

/// Writes `hda,window,overall_accuracy,n,migrant_accuracy,n_migrants,non_migrant_accuracy,n_non_migrants`.
pub fn write_accuracy<W: Write>(reports: &[AccuracyReport], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "hda",
        "window",
        "overall_accuracy",
        "n",
        "migrant_accuracy",
        "n_migrants",
        "non_migrant_accuracy",
        "n_non_migrants",
    ])?;
    let acc = |t: &Tally| t.accuracy().map(|a| a.to_string()).unwrap_or_default();
    for r in reports {
        out.write_record([
            r.hda.clone(),
            r.window.clone(),
            acc(&r.overall),
            r.overall.total.to_string(),
            acc(&r.migrants),
            r.migrants.total.to_string(),
            acc(&r.non_migrants),
            r.non_migrants.total.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<accuracy>", e))?;
    Ok(())
}

/// First day of the span plus `offset` days.
pub fn span_day(span: DatasetSpan, offset: u64) -> NaiveDate {
    span.first_day() + Days::new(offset)
}
