use chrono::{NaiveDate, NaiveDateTime};
use hometower::hda::{detect_cells, CellCounts};
use hometower::metrics::{decile_summary, pearson_r};
use hometower::{
    detect_home, CdrRecord, DatasetSpan, DetectOptions, DurationClass, HdaSpec, LocalClock, LocalRecord, Tower, TowerId,
    TowerRegistry, UserId, UserPartition,
};
use proptest::prelude::*;

fn local(tower: u32, minutes: i64) -> LocalRecord {
    let clock = LocalClock::default();
    let base = NaiveDate::from_ymd_opt(2007, 6, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let t: NaiveDateTime = base + chrono::Duration::minutes(minutes);
    let ts = clock.to_epoch(t).unwrap();
    LocalRecord::new(
        CdrRecord {
            user: UserId(1),
            tower: TowerId(tower),
            timestamp: ts,
        },
        clock.derive_local_time(ts),
    )
}

fn trace() -> impl Strategy<Value = Vec<LocalRecord>> {
    prop::collection::vec((1u32..6, 0i64..(28 * 24 * 60)), 1..60)
        .prop_map(|v| v.into_iter().map(|(t, m)| local(t, m)).collect())
}

fn specs() -> Vec<HdaSpec> {
    HdaSpec::canonical()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn record_order_is_irrelevant(recs in trace(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        for spec in specs() {
            prop_assert_eq!(detect_home(&recs, &spec), detect_home(&shuffled, &spec));
        }
    }

    #[test]
    fn duplicating_a_record_never_changes_dd(recs in trace(), pick in any::<prop::sample::Index>()) {
        let mut more = recs.clone();
        more.push(recs[pick.index(recs.len())]);
        let dd = HdaSpec::distinct_days();
        prop_assert_eq!(detect_home(&recs, &dd).home, detect_home(&more, &dd).home);
    }

    #[test]
    fn unrestricted_time_constraint_is_max_activities(recs in trace()) {
        let tc: HdaSpec = "TC".parse().unwrap();
        prop_assert_eq!(detect_home(&recs, &tc), detect_home(&recs, &HdaSpec::max_activities()));
    }

    #[test]
    fn winner_has_the_top_score(recs in trace()) {
        let ma = detect_home(&recs, &HdaSpec::max_activities());
        let home = ma.home.unwrap();
        let count = |t: TowerId| recs.iter().filter(|r| r.tower == t).count() as u32;
        prop_assert_eq!(count(home), ma.qualifying_count);
        for t in 1..6 {
            prop_assert!(count(TowerId(t)) <= ma.qualifying_count);
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..80),
        a in 0.1f64..50.0,
        b in -1e3f64..1e3,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let (Ok(r1), Ok(r2)) = (pearson_r(&x, &y), pearson_r(&y, &x)) {
            prop_assert_eq!(r1, r2);
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r3 = pearson_r(&scaled, &y).unwrap();
            prop_assert!((r1 - r3).abs() < 1e-9);
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((r1 + pearson_r(&flipped, &y).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&r1));
        }
    }

    #[test]
    fn deciles_ignore_tower_order(pairs in prop::collection::vec((0u32..50, 0u32..1000), 0..120), seed in any::<u64>()) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let xp: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        prop_assert_eq!(decile_summary(&x, &y), decile_summary(&xp, &yp));
    }

    #[test]
    fn cell_counts_merge_like_one_partition(
        users in prop::collection::vec(prop::collection::vec((1u32..6, 0i64..(28 * 24 * 60)), 1..20), 1..40),
        parts in 1usize..6,
    ) {
        let registry = TowerRegistry::new((1..6).map(|i| Tower { id: TowerId(i), lon: 0.0, lat: 0.0, population: 1.0 }).collect()).unwrap();
        let mut all = Vec::new();
        for (u, recs) in users.iter().enumerate() {
            for &(t, m) in recs {
                let mut r = local(t, m);
                r.user = UserId(u as u64 + 1);
                all.push(r);
            }
        }
        let span = DatasetSpan::parse("2007-06-01..2007-06-28").unwrap();
        let window = &hometower::generate_windows(span, &[DurationClass::Full])[0];
        let single = vec![UserPartition::from_records(0, all.clone())];
        let mut buckets = vec![Vec::new(); parts];
        for r in &all {
            buckets[r.user.0 as usize % parts].push(*r);
        }
        let split: Vec<UserPartition> = buckets.into_iter().enumerate().map(|(i, b)| UserPartition::from_records(i, b)).collect();
        let a = detect_cells(&single, &registry, window, &specs(), DetectOptions::default()).unwrap();
        let b = detect_cells(&split, &registry, window, &specs(), DetectOptions::default()).unwrap();
        prop_assert_eq!(&a, &b);
        // every active user gets exactly one home under MA
        let ma: &CellCounts = &a[0];
        prop_assert_eq!(ma.x.iter().sum::<u64>(), users.len() as u64);
        prop_assert_eq!(ma.users_active, users.len() as u64);
    }
}
