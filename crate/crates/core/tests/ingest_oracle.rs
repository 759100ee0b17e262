mod common;

use std::collections::BTreeMap;
use std::io::Write;

use hometower::{ingest_reader, DatasetSpan, IngestOptions, TowerRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type PerUser = BTreeMap<u64, Vec<(i64, u32)>>;

struct Reference {
    users: PerUser,
    malformed: u64,
    unknown: u64,
    out_of_span: u64,
}

/// Line-at-a-time reader written from the file format description.
fn reference(text: &str, towers: u32, first_day: i64, last_day: i64) -> Reference {
    let mut r = Reference {
        users: PerUser::new(),
        malformed: 0,
        unknown: 0,
        out_of_span: 0,
    };
    let body = text.strip_suffix('\n').unwrap_or(text);
    // blank lines are counted as malformed, not skipped
    for (i, line) in body.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let f: Vec<&str> = line.split(',').collect();
        if i == 0 && f[0].trim().parse::<u64>().is_err() {
            continue;
        }
        let parsed = (f.len() == 3)
            .then(|| (f[0].trim().parse::<u64>(), f[1].trim().parse::<u32>(), f[2].trim().parse::<i64>()));
        match parsed {
            Some((Ok(u), Ok(t), Ok(ts))) => {
                let day = common::paris_local(ts).day;
                if t == 0 || t > towers {
                    r.unknown += 1;
                } else if day < first_day || day > last_day {
                    r.out_of_span += 1;
                } else {
                    r.users.entry(u).or_default().push((ts, t));
                }
            }
            _ => r.malformed += 1,
        }
    }
    for v in r.users.values_mut() {
        v.sort();
    }
    r
}

fn collect(ingested: &hometower::Ingested) -> PerUser {
    let mut out = PerUser::new();
    for p in &ingested.partitions {
        for trace in p.users() {
            let v: Vec<(i64, u32)> = trace.records.iter().map(|r| (r.timestamp, r.tower.0)).collect();
            assert!(out.insert(trace.user.0, v).is_none(), "user split across partitions");
        }
    }
    for v in out.values_mut() {
        v.sort();
    }
    out
}

#[test]
fn partitioned_ingest_matches_reference_reader() {
    let towers = 40;
    let registry = TowerRegistry::read_from(&common::write_registry(towers)[..]).unwrap();
    let span = DatasetSpan::parse("2007-05-13..2007-06-11").unwrap();
    let first = common::days_from_civil(2007, 5, 13);
    let last = common::days_from_civil(2007, 6, 11);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut buf = Vec::new();
    writeln!(buf, "user_id,tower_id,timestamp").unwrap();
    for i in 0..10_000 {
        let u = rng.gen_range(1..800u64);
        let t = rng.gen_range(1..=towers + 3);
        // a little before and after the span too
        let ts = (first - 2) * 86_400 + rng.gen_range(0..34 * 86_400);
        match i % 97 {
            0 => writeln!(buf, "{u},{t}").unwrap(),
            1 => writeln!(buf, "{u},x{t},{ts}").unwrap(),
            2 => write!(buf, "{u},{t},{ts}\r\n").unwrap(),
            3 => writeln!(buf).unwrap(),
            _ => writeln!(buf, "{u},{t},{ts}").unwrap(),
        }
    }
    let text = String::from_utf8(buf.clone()).unwrap();
    let want = reference(&text, towers, first, last);

    let mut results = Vec::new();
    for (partitions, block_bytes) in [(1, 4 << 20), (4, 4 << 20), (4, 1000), (7, 64)] {
        let opts = IngestOptions {
            partitions,
            block_bytes,
            ..IngestOptions::default()
        };
        let got = ingest_reader(&buf[..], &registry, span, &opts).unwrap();
        assert_eq!(got.report.rejected_malformed, want.malformed);
        assert_eq!(got.report.rejected_unknown_tower, want.unknown);
        assert_eq!(got.report.rejected_out_of_span, want.out_of_span);
        assert_eq!(got.report.distinct_users, want.users.len() as u64);
        assert_eq!(got.partitions.len(), partitions);
        let users = collect(&got);
        assert_eq!(users, want.users);
        results.push(users);
    }
    assert!(want.malformed > 0 && want.unknown > 0 && want.out_of_span > 0);
}
