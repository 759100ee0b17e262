//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's time, window or detection code.

#![allow(dead_code)]

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Days since 1970-01-01 to (year, month, day), proleptic Gregorian.
pub fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

pub fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y.rem_euclid(400);
    let mp = if m > 2 { m - 3 } else { m + 9 } as i64;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Monday = 0.
pub fn weekday_from_days(z: i64) -> u32 {
    // 1970-01-01 was a Thursday
    ((z + 3).rem_euclid(7)) as u32
}

fn last_sunday(y: i64, m: u32) -> i64 {
    let last = days_from_civil(y, m, 31);
    last - ((weekday_from_days(last) + 1) % 7) as i64
}

/// Central European time: UTC+2 from the last Sunday of March 01:00 UTC to
/// the last Sunday of October 01:00 UTC, UTC+1 otherwise.
pub fn paris_offset(ts: i64) -> i64 {
    let (y, _, _) = civil_from_days(ts.div_euclid(86_400));
    let start = last_sunday(y, 3) * 86_400 + 3600;
    let end = last_sunday(y, 10) * 86_400 + 3600;
    if (start..end).contains(&ts) {
        7200
    } else {
        3600
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Local {
    /// Days since 1970-01-01 of the local date.
    pub day: i64,
    pub hour: u32,
    pub weekday: u32,
}

pub fn paris_local(ts: i64) -> Local {
    let local = ts + paris_offset(ts);
    let day = local.div_euclid(86_400);
    Local {
        day,
        hour: (local.rem_euclid(86_400) / 3600) as u32,
        weekday: weekday_from_days(day),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Ma,
    Dd,
    Tc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Days {
    All,
    Weekend,
    Weekday,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleSpec {
    pub name: &'static str,
    pub kind: Kind,
    pub hours: Option<(u32, u32)>,
    pub days: Days,
}

/// The nine published HDAs, written out by hand.
pub const CANONICAL: [OracleSpec; 9] = [
    OracleSpec { name: "MA", kind: Kind::Ma, hours: None, days: Days::All },
    OracleSpec { name: "DD", kind: Kind::Dd, hours: None, days: Days::All },
    OracleSpec { name: "TC-19-9", kind: Kind::Tc, hours: Some((19, 9)), days: Days::All },
    OracleSpec { name: "TC-19-9-WE", kind: Kind::Tc, hours: Some((19, 9)), days: Days::Weekend },
    OracleSpec { name: "TC-21-7", kind: Kind::Tc, hours: Some((21, 7)), days: Days::All },
    OracleSpec { name: "TC-21-7-WE", kind: Kind::Tc, hours: Some((21, 7)), days: Days::Weekend },
    OracleSpec { name: "TC-9-19", kind: Kind::Tc, hours: Some((9, 19)), days: Days::All },
    OracleSpec { name: "TC-9-19-WK", kind: Kind::Tc, hours: Some((9, 19)), days: Days::Weekday },
    OracleSpec { name: "TC-WE", kind: Kind::Tc, hours: None, days: Days::Weekend },
];

fn qualifies(spec: &OracleSpec, l: Local) -> bool {
    let hour_ok = match spec.hours {
        None => true,
        Some((s, e)) if s < e => s <= l.hour && l.hour < e,
        Some((s, e)) => l.hour >= s || l.hour < e,
    };
    let day_ok = match spec.days {
        Days::All => true,
        Days::Weekend => l.weekday >= 5,
        Days::Weekday => l.weekday < 5,
    };
    hour_ok && day_ok
}

/// Brute force over every candidate tower. `records` are (tower, timestamp);
/// only records whose local day lies in `[first_day, last_day]` are used.
pub fn oracle_home(
    records: &[(u32, i64)],
    towers: &[u32],
    spec: &OracleSpec,
    first_day: i64,
    last_day: i64,
) -> Option<u32> {
    let mut best: Option<(usize, i64, u32)> = None;
    for &t in towers {
        let mut hits: Vec<(i64, Local)> = Vec::new();
        for &(tower, ts) in records {
            let l = paris_local(ts);
            if tower == t && l.day >= first_day && l.day <= last_day && qualifies(spec, l) {
                hits.push((ts, l));
            }
        }
        if hits.is_empty() {
            continue;
        }
        let score = match spec.kind {
            Kind::Dd => {
                let mut days: Vec<i64> = hits.iter().map(|h| h.1.day).collect();
                days.sort();
                days.dedup();
                days.len()
            }
            _ => hits.len(),
        };
        let first = hits.iter().map(|h| h.0).min().unwrap();
        let better = match best {
            None => true,
            Some((s, f, bt)) => score > s || (score == s && (first < f || (first == f && t < bt))),
        };
        if better {
            best = Some((score, first, t));
        }
    }
    best.map(|b| b.2)
}

/// Users with bursty, tie-prone traces: each user visits a handful of
/// towers, often at shared instants.
pub fn random_traces(seed: u64, users: u64, towers: u32, first_ts: i64, days: i64) -> Vec<(u64, u32, i64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for user in 1..=users {
        let k = rng.gen_range(1..=4);
        let own: Vec<u32> = (0..k).map(|_| rng.gen_range(1..=towers)).collect();
        let n = rng.gen_range(1..=40);
        let mut last = first_ts + rng.gen_range(0..days * 86_400);
        for _ in 0..n {
            let tower = own[rng.gen_range(0..own.len())];
            // a quarter of records reuse the previous instant to create ties
            let ts = if rng.gen_bool(0.25) {
                last
            } else {
                first_ts + rng.gen_range(0..days * 86_400)
            };
            last = ts;
            out.push((user, tower, ts));
        }
    }
    out
}

pub fn write_records(records: &[(u64, u32, i64)]) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "user_id,tower_id,timestamp").unwrap();
    for (u, t, ts) in records {
        writeln!(buf, "{u},{t},{ts}").unwrap();
    }
    buf
}

pub fn write_registry(towers: u32) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "tower_id,lon,lat,population").unwrap();
    for t in 1..=towers {
        writeln!(buf, "{t},{},{},{}", t as f64 * 0.01, 45.0, (t * 37) % 101 + 1).unwrap();
    }
    buf
}
