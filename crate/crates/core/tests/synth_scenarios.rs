use std::collections::BTreeMap;

use chrono::NaiveDate;
use hometower::hda::assign_homes;
use hometower::synth::{score_against_truth, MigrationConfig, SynthConfig, Synthesizer, TouristicTowers};
use hometower::{generate_windows, ingest_reader, DatasetSpan, DetectOptions, DurationClass, HdaSpec, IngestOptions};

fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_towers: 60,
        n_population: 4000,
        ..SynthConfig::default()
    }
}

fn migrating(seed: u64, fraction: f64) -> SynthConfig {
    SynthConfig {
        migration: Some(MigrationConfig {
            first_day: d("2007-07-01"),
            last_day: d("2007-08-31"),
            fraction,
            towers: TouristicTowers::Count(4),
        }),
        ..small(seed)
    }
}

fn partitions(s: &Synthesizer) -> Vec<hometower::UserPartition> {
    let mut buf = Vec::new();
    s.write_records(&mut buf).unwrap();
    ingest_reader(
        &buf[..],
        s.registry(),
        s.config().span,
        &IngestOptions {
            partitions: 4,
            ..IngestOptions::default()
        },
    )
    .unwrap()
    .partitions
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Synthesizer::new(migrating(4, 0.3)).unwrap().write_dataset(a.path()).unwrap();
    Synthesizer::new(migrating(4, 0.3)).unwrap().write_dataset(b.path()).unwrap();
    for f in ["records.csv", "towers.csv", "truth.csv", "synth.conf"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn parallel_generation_equals_sequential() {
    let s = Synthesizer::new(migrating(2, 0.3)).unwrap();
    let sequential: Vec<_> = (0..s.user_count()).flat_map(|i| s.user_records(i)).collect();
    assert_eq!(s.records(), sequential);
}

#[test]
fn subscriber_count_and_conservation() {
    let cfg = SynthConfig {
        n_population: 100_000,
        span: DatasetSpan::parse("2007-06-01..2007-06-03").unwrap(),
        ..SynthConfig::default()
    };
    let s = Synthesizer::new(cfg).unwrap();
    assert_eq!(s.user_count(), 28_000);
    assert_eq!(s.truth().len(), 28_000);
    let clock = s.config().clock;
    let recs = s.records();
    for r in &recs {
        assert!(s.registry().contains(r.tower));
        assert!(s.config().span.contains(clock.derive_local_time(r.timestamp).date));
    }
    for row in s.truth().rows() {
        assert!(s.registry().contains(row.home) && s.registry().contains(row.work));
    }
}

#[test]
fn median_daily_records_is_about_four() {
    for seed in 1..=10 {
        let cfg = SynthConfig {
            seed,
            n_population: 20_000,
            span: DatasetSpan::parse("2007-06-01..2007-06-10").unwrap(),
            ..SynthConfig::default()
        };
        let s = Synthesizer::new(cfg).unwrap();
        let clock = s.config().clock;
        let probe = d("2007-06-05");
        let mut per_user: BTreeMap<u64, u32> = BTreeMap::new();
        for r in s.records() {
            if clock.derive_local_time(r.timestamp).date == probe {
                *per_user.entry(r.user.0).or_default() += 1;
            }
        }
        let mut counts: Vec<u32> = per_user.into_values().collect();
        counts.sort_unstable();
        let median = counts[(counts.len() - 1) / 2];
        assert!((3..=5).contains(&median), "seed {seed}: median {median}");
    }
}

#[test]
fn all_events_at_home_gives_perfect_ma_and_dd() {
    let cfg = SynthConfig {
        home_call_share_night: 1.0,
        home_call_share_day: 1.0,
        work_call_share_day: 0.0,
        ..small(9)
    };
    let s = Synthesizer::new(cfg).unwrap();
    let parts = partitions(&s);
    let truth = s.truth();
    for w in generate_windows(s.config().span, &[DurationClass::Days14, DurationClass::Full]) {
        for spec in [HdaSpec::max_activities(), HdaSpec::distinct_days()] {
            let a = assign_homes(&parts, &w, &spec, DetectOptions::default());
            let r = &score_against_truth(&a, &truth, &w).unwrap()[0];
            assert_eq!(r.overall.accuracy(), Some(1.0), "{} {}", spec.name(), w.label);
        }
    }
}

#[test]
fn night_windows_beat_day_windows_without_migration() {
    for seed in 1..=3 {
        let s = Synthesizer::new(small(seed)).unwrap();
        let parts = partitions(&s);
        let w = &generate_windows(s.config().span, &[DurationClass::Full])[0];
        let acc = |name: &str| {
            let a = assign_homes(&parts, w, &name.parse().unwrap(), DetectOptions::default());
            score_against_truth(&a, &s.truth(), w).unwrap()[0].overall.accuracy().unwrap()
        };
        assert!(acc("TC-19-9") >= acc("TC-9-19"));
    }
}

#[test]
fn migrants_are_detected_worse_inside_the_migration_range() {
    for seed in 1..=10 {
        let s = Synthesizer::new(migrating(seed, 0.3)).unwrap();
        let parts = partitions(&s);
        let span = s.config().span;
        let w = generate_windows(span, &[DurationClass::Days14])
            .into_iter()
            .find(|w| w.label == "14d-05")
            .unwrap();
        assert!(w.first_day >= d("2007-07-01") && w.last_day <= d("2007-08-31"));
        for spec in HdaSpec::canonical() {
            let a = assign_homes(&parts, &w, &spec, DetectOptions::default());
            let r = &score_against_truth(&a, &s.truth(), &w).unwrap()[0];
            let (m, n) = (r.migrants.accuracy().unwrap(), r.non_migrants.accuracy().unwrap());
            assert!(m < n, "seed {seed} {}: migrants {m} residents {n}", spec.name());
        }
    }
}

#[test]
fn more_migration_never_helps() {
    let fractions = [0.0, 0.1, 0.3, 0.5];
    let mut previous = vec![f64::INFINITY; 9];
    for f in fractions {
        let s = Synthesizer::new(migrating(6, f)).unwrap();
        let parts = partitions(&s);
        let windows: Vec<_> = generate_windows(s.config().span, &[DurationClass::Days14])
            .into_iter()
            .filter(|w| w.first_day <= d("2007-08-31") && d("2007-07-01") <= w.last_day)
            .collect();
        for (i, spec) in HdaSpec::canonical().iter().enumerate() {
            let mut sum = 0.0;
            for w in &windows {
                let a = assign_homes(&parts, w, spec, DetectOptions::default());
                sum += score_against_truth(&a, &s.truth(), w).unwrap()[0].overall.accuracy().unwrap();
            }
            let mean = sum / windows.len() as f64;
            assert!(mean <= previous[i], "{} at fraction {f}: {mean} > {}", spec.name(), previous[i]);
            previous[i] = mean;
        }
    }
}

#[test]
fn other_users_keep_their_traces_when_the_fraction_changes() {
    let lo = Synthesizer::new(migrating(3, 0.1)).unwrap();
    let hi = Synthesizer::new(migrating(3, 0.3)).unwrap();
    let (tl, th) = (lo.truth(), hi.truth());
    let mut same = 0;
    for i in 0..lo.user_count() {
        let (a, b) = (&tl.rows()[i], &th.rows()[i]);
        assert_eq!((a.home, a.work), (b.home, b.work));
        if a.migration.is_some() {
            assert_eq!(a.migration, b.migration, "a migrant at 0.1 stays one at 0.3");
        }
        if a.migration == b.migration {
            assert_eq!(lo.user_records(i), hi.user_records(i));
            same += 1;
        }
    }
    assert!(same > lo.user_count() / 2);
}

#[test]
fn missing_truth_user_is_fatal() {
    let s = Synthesizer::new(small(1)).unwrap();
    let parts = partitions(&s);
    let w = &generate_windows(s.config().span, &[DurationClass::Full])[0];
    let a = assign_homes(&parts, w, &HdaSpec::max_activities(), DetectOptions::default());
    let partial = hometower::synth::GroundTruthTable::new(s.truth().rows()[1..].to_vec(), None);
    assert!(matches!(
        score_against_truth(&a, &partial, w),
        Err(hometower::Error::MissingTruth(_))
    ));
}
