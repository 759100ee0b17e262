//! Home detection algorithms and per-tower aggregation of detected homes.
//!
//! Every algorithm picks, for one user and one observation window, the tower
//! that maximises a score over the user's qualifying records:
//!
//! * `MA` counts all records,
//! * `DD` counts distinct civil days with at least one record,
//! * `TC-*` counts records whose local hour and weekday pass a time filter.
//!
//! Hour ranges are half-open, `[start, end)`, wrapping past midnight when
//! `start > end`. Ties go to the tower whose first qualifying record is
//! earliest, then to the smaller tower id.

use std::fmt;
use std::str::FromStr;

use chrono::Weekday;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdr::{LocalRecord, TowerId, TowerRegistry, UserId, UserPartition};
use crate::error::{Error, Result};
use crate::windows::ObservationWindow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    MaxActivities,
    DistinctDays,
    TimeConstraint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DayFilter {
    All,
    WeekendOnly,
    WeekdayOnly,
}

impl DayFilter {
    fn accepts(self, weekday: Weekday) -> bool {
        let weekend = matches!(weekday, Weekday::Sat | Weekday::Sun);
        match self {
            DayFilter::All => true,
            DayFilter::WeekendOnly => weekend,
            DayFilter::WeekdayOnly => !weekend,
        }
    }
}

/// Half-open local hour interval `[start, end)`; wraps midnight when `start > end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HourRange {
    start: u8,
    end: u8,
}

impl HourRange {
    pub fn new(start: u8, end: u8) -> Result<Self> {
        if start > 23 || end > 23 || start == end {
            return Err(Error::HdaSpec {
                spec: format!("{start}-{end}"),
                reason: "hours must be distinct values in 0..=23".into(),
            });
        }
        Ok(HourRange { start, end })
    }

    pub fn start(&self) -> u8 {
        self.start
    }

    pub fn end(&self) -> u8 {
        self.end
    }

    pub fn contains(&self, hour: u8) -> bool {
        if self.start < self.end {
            self.start <= hour && hour < self.end
        } else {
            hour >= self.start || hour < self.end
        }
    }
}

/// A home detection algorithm: criterion plus time-constraint parameters.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HdaSpec {
    name: String,
    criterion: Criterion,
    hours: Option<HourRange>,
    day_filter: DayFilter,
    // bit `h` of entry `d` set when hour h on weekday d (Mon = 0) qualifies
    accept: [u32; 7],
}

impl HdaSpec {
    pub fn max_activities() -> Self {
        Self::build("MA".into(), Criterion::MaxActivities, None, DayFilter::All)
    }

    pub fn distinct_days() -> Self {
        Self::build("DD".into(), Criterion::DistinctDays, None, DayFilter::All)
    }

    /// A time-constraint HDA. `hours = None` means no hour restriction.
    pub fn time_constraint(hours: Option<HourRange>, day_filter: DayFilter) -> Self {
        let mut name = String::from("TC");
        if let Some(h) = hours {
            name.push_str(&format!("-{}-{}", h.start, h.end));
        }
        match day_filter {
            DayFilter::All => {}
            DayFilter::WeekendOnly => name.push_str("-WE"),
            DayFilter::WeekdayOnly => name.push_str("-WK"),
        }
        Self::build(name, Criterion::TimeConstraint, hours, day_filter)
    }

    fn build(name: String, criterion: Criterion, hours: Option<HourRange>, day_filter: DayFilter) -> Self {
        let mut accept = [0u32; 7];
        for (wd, mask) in accept.iter_mut().enumerate() {
            let weekday = Weekday::try_from(wd as u8).unwrap();
            for hour in 0..24u8 {
                let ok = criterion != Criterion::TimeConstraint
                    || (hours.is_none_or(|h| h.contains(hour)) && day_filter.accepts(weekday));
                if ok {
                    *mask |= 1 << hour;
                }
            }
        }
        HdaSpec {
            name,
            criterion,
            hours,
            day_filter,
            accept,
        }
    }

    /// The nine algorithms: MA, DD and seven time-constraint variants.
    pub fn canonical() -> Vec<HdaSpec> {
        let tc = |s, e, f| Self::time_constraint(Some(HourRange::new(s, e).unwrap()), f);
        vec![
            Self::max_activities(),
            Self::distinct_days(),
            tc(19, 9, DayFilter::All),
            tc(19, 9, DayFilter::WeekendOnly),
            tc(21, 7, DayFilter::All),
            tc(21, 7, DayFilter::WeekendOnly),
            tc(9, 19, DayFilter::All),
            tc(9, 19, DayFilter::WeekdayOnly),
            Self::time_constraint(None, DayFilter::WeekendOnly),
        ]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn hours(&self) -> Option<HourRange> {
        self.hours
    }

    pub fn day_filter(&self) -> DayFilter {
        self.day_filter
    }

    #[inline]
    fn accepts_index(&self, hour: u8, weekday: u8) -> bool {
        self.accept[weekday as usize] >> hour & 1 == 1
    }
}

impl fmt::Display for HdaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Parses `MA`, `DD`, `TC`, `TC-WE`, `TC-WK`, `TC-<start>-<end>` and
/// `TC-<start>-<end>-WE|WK`.
impl FromStr for HdaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |reason: &str| Error::HdaSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        match s {
            "MA" => return Ok(Self::max_activities()),
            "DD" => return Ok(Self::distinct_days()),
            _ => {}
        }
        let mut parts: Vec<&str> = s.split('-').collect();
        if parts.first() != Some(&"TC") {
            return Err(bad("expected MA, DD or TC-..."));
        }
        parts.remove(0);
        let day_filter = match parts.last() {
            Some(&"WE") => {
                parts.pop();
                DayFilter::WeekendOnly
            }
            Some(&"WK") => {
                parts.pop();
                DayFilter::WeekdayOnly
            }
            _ => DayFilter::All,
        };
        let hours = match parts.as_slice() {
            [] => None,
            [a, b] => {
                let a = a.parse::<u8>().map_err(|_| bad("bad start hour"))?;
                let b = b.parse::<u8>().map_err(|_| bad("bad end hour"))?;
                Some(HourRange::new(a, b).map_err(|_| bad("hours must be distinct values in 0..=23"))?)
            }
            _ => return Err(bad("expected TC-<start>-<end>[-WE|-WK]")),
        };
        Ok(Self::time_constraint(hours, day_filter))
    }
}

/// Whether a record at local `hour` on `weekday` counts towards `spec`.
/// Always true for MA and DD.
pub fn tc_filter_accepts(spec: &HdaSpec, hour: u8, weekday: Weekday) -> bool {
    hour < 24 && spec.accepts_index(hour, weekday.num_days_from_monday() as u8)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectOptions {
    /// Users whose winning score is below this get no home. 0 and 1 are equivalent.
    pub min_qualifying: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct HomeDecision {
    pub home: Option<TowerId>,
    /// Winning score: records (MA, TC) or distinct days (DD). 0 iff `home` is none.
    pub qualifying_count: u32,
    pub tie_broken: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HomeAssignment {
    pub user: UserId,
    pub window: String,
    pub hda: String,
    pub home: Option<TowerId>,
    pub qualifying_count: u32,
    pub tie_broken: bool,
}

/// Reusable per-thread scratch for home detection.
#[derive(Debug, Default)]
pub struct HomeDetector {
    scratch: Vec<(TowerId, i32, i64)>,
    in_window: Vec<LocalRecord>,
}

impl HomeDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Detects the home among `records`, which are all assumed to lie in the
    /// window of interest. Record order does not matter.
    pub fn detect(&mut self, records: &[LocalRecord], spec: &HdaSpec, opts: DetectOptions) -> HomeDecision {
        self.scratch.clear();
        self.scratch.extend(
            records
                .iter()
                .filter(|r| spec.accepts_index(r.hour, r.weekday))
                .map(|r| (r.tower, r.day, r.timestamp)),
        );
        if self.scratch.is_empty() {
            return HomeDecision::default();
        }
        self.scratch.sort_unstable();

        let distinct_days = spec.criterion == Criterion::DistinctDays;
        // (score, first_ts, tower)
        let mut best: Option<(u32, i64, TowerId)> = None;
        let mut at_max = 0u32;
        let mut i = 0;
        while i < self.scratch.len() {
            let tower = self.scratch[i].0;
            let mut score = 0u32;
            let mut first_ts = i64::MAX;
            let mut last_day = None;
            while i < self.scratch.len() && self.scratch[i].0 == tower {
                let (_, day, ts) = self.scratch[i];
                first_ts = first_ts.min(ts);
                if !distinct_days || last_day != Some(day) {
                    score += 1;
                }
                last_day = Some(day);
                i += 1;
            }
            match best {
                Some((s, _, _)) if score < s => {}
                Some((s, f, t)) if score == s => {
                    at_max += 1;
                    if (first_ts, tower) < (f, t) {
                        best = Some((score, first_ts, tower));
                    }
                }
                _ => {
                    best = Some((score, first_ts, tower));
                    at_max = 1;
                }
            }
        }
        let (score, _, tower) = best.expect("non-empty scratch");
        if score < opts.min_qualifying {
            return HomeDecision::default();
        }
        HomeDecision {
            home: Some(tower),
            qualifying_count: score,
            tie_broken: at_max > 1,
        }
    }

    /// Detects homes for every spec over the records falling inside `window`.
    /// Returns `None` when the user has no record in the window.
    pub fn detect_in_window<'s>(
        &mut self,
        records: &[LocalRecord],
        window: &ObservationWindow,
        specs: impl IntoIterator<Item = &'s HdaSpec>,
        opts: DetectOptions,
        mut sink: impl FnMut(usize, HomeDecision),
    ) -> bool {
        let mut in_window = std::mem::take(&mut self.in_window);
        in_window.clear();
        in_window.extend(records.iter().filter(|r| window.contains_day(r.day)).copied());
        let active = !in_window.is_empty();
        if active {
            for (idx, spec) in specs.into_iter().enumerate() {
                sink(idx, self.detect(&in_window, spec, opts));
            }
        }
        self.in_window = in_window;
        active
    }
}

pub fn detect_home(records: &[LocalRecord], spec: &HdaSpec) -> HomeDecision {
    HomeDetector::new().detect(records, spec, DetectOptions::default())
}

/// Per-tower user counts for one (HDA, window) cell, mergeable across partitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub x: Vec<u64>,
    /// Users with at least one record in the window.
    pub users_active: u64,
    pub users_assigned: u64,
    pub ties: u64,
}

impl CellCounts {
    pub fn zeros(towers: usize) -> Self {
        CellCounts {
            x: vec![0; towers],
            users_active: 0,
            users_assigned: 0,
            ties: 0,
        }
    }

    pub fn merge(&mut self, other: &CellCounts) {
        assert_eq!(self.x.len(), other.x.len(), "merging counts of different registries");
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            *a += b;
        }
        self.users_active += other.users_active;
        self.users_assigned += other.users_assigned;
        self.ties += other.ties;
    }

    /// Counts one user's decision.
    pub fn add(&mut self, decision: HomeDecision, registry: &TowerRegistry) -> Result<()> {
        if let Some(tower) = decision.home {
            let pos = registry.position(tower).ok_or(Error::UnregisteredTower(tower))?;
            self.x[pos] += 1;
            self.users_assigned += 1;
            if decision.tie_broken {
                self.ties += 1;
            }
        }
        Ok(())
    }
}

/// Aligned per-tower vectors in registry order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerVectors {
    pub tower_ids: Vec<TowerId>,
    pub x: Vec<u64>,
    pub y: Vec<f64>,
}

impl TowerVectors {
    pub fn from_counts(x: Vec<u64>, registry: &TowerRegistry) -> Self {
        assert_eq!(x.len(), registry.len());
        TowerVectors {
            tower_ids: registry.towers().iter().map(|t| t.id).collect(),
            x,
            y: registry.populations(),
        }
    }

    pub fn assigned_users(&self) -> u64 {
        self.x.iter().sum()
    }

    pub fn x_f64(&self) -> Vec<f64> {
        self.x.iter().map(|&v| v as f64).collect()
    }
}

/// Counts users per home tower. All assignments must share one (hda, window).
pub fn aggregate_homes(assignments: &[HomeAssignment], registry: &TowerRegistry) -> Result<TowerVectors> {
    let mut x = vec![0u64; registry.len()];
    if let Some(first) = assignments.first() {
        for a in assignments {
            if a.hda != first.hda || a.window != first.window {
                return Err(Error::Sweep(format!(
                    "cannot aggregate assignments of ({}, {}) with ({}, {})",
                    first.hda, first.window, a.hda, a.window
                )));
            }
            if let Some(tower) = a.home {
                let pos = registry.position(tower).ok_or(Error::UnregisteredTower(tower))?;
                x[pos] += 1;
            }
        }
    }
    Ok(TowerVectors::from_counts(x, registry))
}

/// Runs every spec over one window on all partitions in parallel and merges
/// the per-partition counts. Output is independent of the partitioning.
pub fn detect_cells(
    partitions: &[UserPartition],
    registry: &TowerRegistry,
    window: &ObservationWindow,
    specs: &[HdaSpec],
    opts: DetectOptions,
) -> Result<Vec<CellCounts>> {
    let partials: Vec<Result<Vec<CellCounts>>> = partitions
        .par_iter()
        .map(|part| {
            let mut detector = HomeDetector::new();
            let mut counts = vec![CellCounts::zeros(registry.len()); specs.len()];
            let mut failure = None;
            for trace in part.users() {
                let active = detector.detect_in_window(trace.records, window, specs, opts, |idx, decision| {
                    if let Err(e) = counts[idx].add(decision, registry) {
                        failure.get_or_insert(e);
                    }
                });
                if active {
                    for c in counts.iter_mut() {
                        c.users_active += 1;
                    }
                }
            }
            match failure {
                Some(e) => Err(e),
                None => Ok(counts),
            }
        })
        .collect();

    let mut merged = vec![CellCounts::zeros(registry.len()); specs.len()];
    for partial in partials {
        for (m, p) in merged.iter_mut().zip(partial?) {
            m.merge(&p);
        }
    }
    Ok(merged)
}

/// Materialises one assignment per user active in `window`, sorted by user id.
pub fn assign_homes(
    partitions: &[UserPartition],
    window: &ObservationWindow,
    spec: &HdaSpec,
    opts: DetectOptions,
) -> Vec<HomeAssignment> {
    let mut out: Vec<HomeAssignment> = partitions
        .par_iter()
        .flat_map_iter(|part| {
            let mut detector = HomeDetector::new();
            let mut local = Vec::new();
            for trace in part.users() {
                detector.detect_in_window(trace.records, window, [spec], opts, |_, d| {
                    local.push(HomeAssignment {
                        user: trace.user,
                        window: window.label.clone(),
                        hda: spec.name().to_string(),
                        home: d.home,
                        qualifying_count: d.qualifying_count,
                        tie_broken: d.tie_broken,
                    });
                });
            }
            local
        })
        .collect();
    out.sort_by_key(|a| a.user);
    out
}

/// Writes `user_id,window,hda,home_tower,qualifying_count,tie_broken`.
pub fn write_assignments<W: std::io::Write>(assignments: &[HomeAssignment], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["user_id", "window", "hda", "home_tower", "qualifying_count", "tie_broken"])?;
    for a in assignments {
        out.write_record([
            a.user.to_string(),
            a.window.clone(),
            a.hda.clone(),
            a.home.map(|t| t.to_string()).unwrap_or_default(),
            a.qualifying_count.to_string(),
            a.tie_broken.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<assignments>", e))?;
    Ok(())
}

/// Reads the layout written by [`write_assignments`].
pub fn read_assignments<R: std::io::Read>(reader: R) -> Result<Vec<HomeAssignment>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Config(format!("assignments row {}: malformed", i + 2));
        if rec.len() != 6 {
            return Err(bad());
        }
        out.push(HomeAssignment {
            user: UserId(rec[0].parse().map_err(|_| bad())?),
            window: rec[1].to_string(),
            hda: rec[2].to_string(),
            home: match &rec[3] {
                "" => None,
                t => Some(TowerId(t.parse().map_err(|_| bad())?)),
            },
            qualifying_count: rec[4].parse().map_err(|_| bad())?,
            tie_broken: rec[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Writes `tower_id,x,y`.
pub fn write_tower_vectors<W: std::io::Write>(vectors: &TowerVectors, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["tower_id", "x", "y"])?;
    for ((id, x), y) in vectors.tower_ids.iter().zip(&vectors.x).zip(&vectors.y) {
        out.write_record([id.to_string(), x.to_string(), y.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<vectors>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdr::{CdrRecord, LocalClock, Tower};
    use chrono::{NaiveDate, TimeZone};
    use Weekday::*;

    fn at(user: u64, tower: u32, y: i32, m: u32, d: u32, h: u32) -> LocalRecord {
        let clock = LocalClock::default();
        let ts = clock.tz().with_ymd_and_hms(y, m, d, h, 0, 0).unwrap().timestamp();
        LocalRecord::new(
            CdrRecord {
                user: UserId(user),
                tower: TowerId(tower),
                timestamp: ts,
            },
            clock.derive_local_time(ts),
        )
    }

    fn spec(name: &str) -> HdaSpec {
        name.parse().unwrap()
    }

    #[test]
    fn canonical_names() {
        let names: Vec<_> = HdaSpec::canonical().iter().map(|s| s.name().to_string()).collect();
        assert_eq!(
            names,
            ["MA", "DD", "TC-19-9", "TC-19-9-WE", "TC-21-7", "TC-21-7-WE", "TC-9-19", "TC-9-19-WK", "TC-WE"]
        );
        for s in HdaSpec::canonical() {
            assert_eq!(spec(s.name()), s);
        }
    }

    #[test]
    fn spec_parse_errors() {
        for bad in ["XX", "TC-19", "TC-19-19", "TC-25-3", "TC-a-b", "TC-1-2-3"] {
            assert!(bad.parse::<HdaSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn filter_boundaries() {
        let night = spec("TC-19-9");
        assert!(tc_filter_accepts(&night, 19, Mon));
        assert!(tc_filter_accepts(&night, 0, Mon));
        assert!(tc_filter_accepts(&night, 8, Mon));
        assert!(!tc_filter_accepts(&night, 9, Mon));
        assert!(!tc_filter_accepts(&night, 18, Mon));
        assert!(!tc_filter_accepts(&spec("TC-9-19-WK"), 12, Sat));
        assert!(tc_filter_accepts(&spec("TC-9-19-WK"), 12, Fri));
        assert!(tc_filter_accepts(&spec("TC-WE"), 3, Sun));
        assert!(!tc_filter_accepts(&spec("TC-WE"), 3, Mon));
        assert!(tc_filter_accepts(&HdaSpec::max_activities(), 3, Mon));
    }

    #[test]
    fn filter_truth_table_for_21_7_weekend() {
        // Hand-written: hours 21,22,23,0..6 on Sat/Sun only.
        let hours = [0, 1, 2, 3, 4, 5, 6, 21, 22, 23];
        let s = spec("TC-21-7-WE");
        for wd in [Mon, Tue, Wed, Thu, Fri, Sat, Sun] {
            for h in 0..24u8 {
                let expected = matches!(wd, Sat | Sun) && hours.contains(&h);
                assert_eq!(tc_filter_accepts(&s, h, wd), expected, "{wd:?} {h}");
            }
        }
        assert!(tc_filter_accepts(&s, 23, Sun));
        assert!(!tc_filter_accepts(&s, 23, Wed));
    }

    #[test]
    fn three_record_example() {
        let recs = [at(1, 1, 2007, 6, 1, 20), at(1, 1, 2007, 6, 2, 22), at(1, 2, 2007, 6, 2, 10)];
        let a = TowerId(1);
        let b = TowerId(2);
        let ma = detect_home(&recs, &spec("MA"));
        assert_eq!((ma.home, ma.qualifying_count, ma.tie_broken), (Some(a), 2, false));
        let dd = detect_home(&recs, &spec("DD"));
        assert_eq!((dd.home, dd.qualifying_count), (Some(a), 2));
        let day = detect_home(&recs, &spec("TC-9-19"));
        assert_eq!((day.home, day.qualifying_count), (Some(b), 1));
    }

    #[test]
    fn singleton_record() {
        // Tuesday 2007-06-05 03:00
        let recs = [at(1, 7, 2007, 6, 5, 3)];
        for s in HdaSpec::canonical() {
            let d = detect_home(&recs, &s);
            let accepted = tc_filter_accepts(&s, 3, Tue);
            assert_eq!(d.home.is_some(), accepted, "{}", s.name());
            if accepted {
                assert_eq!(d.home, Some(TowerId(7)));
                assert_eq!(d.qualifying_count, 1);
            } else {
                assert_eq!(d.qualifying_count, 0);
            }
        }
    }

    #[test]
    fn ties_go_to_earliest_then_smallest_tower() {
        let recs = [at(1, 5, 2007, 6, 2, 10), at(1, 3, 2007, 6, 3, 10)];
        let d = detect_home(&recs, &spec("MA"));
        assert_eq!(d.home, Some(TowerId(5)));
        assert!(d.tie_broken);

        let same_time = [at(1, 5, 2007, 6, 2, 10), at(1, 3, 2007, 6, 2, 10)];
        assert_eq!(detect_home(&same_time, &spec("MA")).home, Some(TowerId(3)));
    }

    #[test]
    fn distinct_days_ignores_same_day_repeats() {
        let recs = [
            at(1, 1, 2007, 6, 2, 10),
            at(1, 1, 2007, 6, 2, 11),
            at(1, 1, 2007, 6, 2, 12),
            at(1, 2, 2007, 6, 3, 10),
            at(1, 2, 2007, 6, 4, 10),
        ];
        assert_eq!(detect_home(&recs, &spec("MA")).home, Some(TowerId(1)));
        let dd = detect_home(&recs, &spec("DD"));
        assert_eq!((dd.home, dd.qualifying_count), (Some(TowerId(2)), 2));
    }

    #[test]
    fn min_qualifying_drops_weak_homes() {
        let recs = [at(1, 1, 2007, 6, 2, 10)];
        let d = HomeDetector::new().detect(&recs, &spec("MA"), DetectOptions { min_qualifying: 2 });
        assert_eq!(d, HomeDecision::default());
    }

    fn registry(n: u32) -> TowerRegistry {
        TowerRegistry::new(
            (1..=n)
                .map(|i| Tower {
                    id: TowerId(i),
                    lon: 0.0,
                    lat: 0.0,
                    population: i as f64,
                })
                .collect(),
        )
        .unwrap()
    }

    fn assignment(user: u64, home: Option<u32>) -> HomeAssignment {
        HomeAssignment {
            user: UserId(user),
            window: "w".into(),
            hda: "MA".into(),
            home: home.map(TowerId),
            qualifying_count: u32::from(home.is_some()),
            tie_broken: false,
        }
    }

    #[test]
    fn aggregation_cases() {
        let reg = registry(4);
        assert_eq!(aggregate_homes(&[], &reg).unwrap().x, vec![0; 4]);
        let three = [assignment(1, Some(3)), assignment(2, Some(3)), assignment(3, Some(3)), assignment(4, None)];
        let v = aggregate_homes(&three, &reg).unwrap();
        assert_eq!(v.x, vec![0, 0, 3, 0]);
        assert_eq!(v.y, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(v.assigned_users(), 3);
        assert!(matches!(
            aggregate_homes(&[assignment(1, Some(9))], &reg),
            Err(Error::UnregisteredTower(TowerId(9)))
        ));
        let mut mixed = assignment(2, Some(1));
        mixed.hda = "DD".into();
        assert!(aggregate_homes(&[assignment(1, Some(1)), mixed], &reg).is_err());
    }

    #[test]
    fn detect_cells_matches_assignments() {
        let reg = registry(3);
        let recs = vec![
            at(1, 1, 2007, 6, 1, 20),
            at(1, 2, 2007, 6, 2, 10),
            at(1, 1, 2007, 6, 3, 21),
            at(2, 3, 2007, 6, 1, 12),
            at(3, 3, 2007, 7, 1, 12),
        ];
        let part = UserPartition::from_records(0, recs);
        let window = ObservationWindow {
            label: "w".into(),
            first_day: NaiveDate::from_ymd_opt(2007, 6, 1).unwrap(),
            last_day: NaiveDate::from_ymd_opt(2007, 6, 14).unwrap(),
            class: crate::windows::DurationClass::Days14,
        };
        let specs = HdaSpec::canonical();
        let cells = detect_cells(std::slice::from_ref(&part), &reg, &window, &specs, DetectOptions::default()).unwrap();
        for (spec, cell) in specs.iter().zip(&cells) {
            let assigned = assign_homes(std::slice::from_ref(&part), &window, spec, DetectOptions::default());
            assert_eq!(assigned.len(), 2);
            let expected = aggregate_homes(&assigned, &reg).unwrap().x;
            assert_eq!(cell.x, expected, "{}", spec.name());
            assert_eq!(cell.users_active, 2);
        }
    }

    #[test]
    fn assignment_dump_format() {
        let mut buf = Vec::new();
        let rows = [assignment(4, Some(2)), assignment(5, None)];
        write_assignments(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "user_id,window,hda,home_tower,qualifying_count,tie_broken\n4,w,MA,2,1,false\n5,w,MA,,0,false\n"
        );
        assert_eq!(read_assignments(&buf[..]).unwrap(), rows);
    }
}
