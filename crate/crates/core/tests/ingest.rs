use chrono::NaiveDate;
use iopscope_core::calendar::{add_days, DateRange};
use iopscope_core::ingest::{fetch_series, load_series, DirectorySource, FetchPolicy, FillPolicy, ManifestEntry};
use proptest::prelude::*;

fn csv(rows: &[(NaiveDate, u64)]) -> String {
    let mut s = String::from("date,count\n");
    for (d, c) in rows {
        s.push_str(&format!("{d},{c}\n"));
    }
    s
}

fn start() -> NaiveDate {
    "2015-07-01".parse().unwrap()
}

/// Rows with gaps of up to six days (weekly or coarser cadence is rejected).
fn sparse_rows() -> impl Strategy<Value = Vec<(NaiveDate, u64)>> {
    prop::collection::vec((1u64..7, 0u64..100), 1..60).prop_map(|steps| {
        let mut day = 0;
        steps
            .into_iter()
            .map(|(gap, c)| {
                day += gap;
                (add_days(start(), day), c)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn row_order_does_not_matter(rows in sparse_rows(), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let mut rng = rand_like(seed);
        for i in (1..shuffled.len()).rev() {
            let j = (rng() % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        for fill in [FillPolicy::Zero, FillPolicy::Previous] {
            prop_assert_eq!(load_series(&csv(&rows), fill).unwrap(), load_series(&csv(&shuffled), fill).unwrap());
        }
    }

    #[test]
    fn length_is_inclusive_day_count(rows in sparse_rows()) {
        let s = load_series(&csv(&rows), FillPolicy::Zero).unwrap();
        let first = rows.first().unwrap().0;
        let last = rows.last().unwrap().0;
        prop_assert_eq!(s.len() as i64, (last - first).num_days() + 1);
        prop_assert_eq!(s.start, first);
        for (d, c) in &rows {
            prop_assert_eq!(s.values[(*d - first).num_days() as usize], *c);
        }
    }
}

/// Small xorshift so the shuffle does not depend on the library's generator.
fn rand_like(seed: u64) -> impl FnMut() -> u64 {
    let mut x = seed | 1;
    move || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x
    }
}

#[test]
fn half_year_window_has_184_days() {
    let rows: Vec<(NaiveDate, u64)> = (0..184).map(|i| (add_days(start(), i), i % 9)).collect();
    let s = load_series(&csv(&rows), FillPolicy::Zero).unwrap();
    assert_eq!(s.len(), 184);
    assert_eq!(s.span().end.to_string(), "2015-12-31");
}

#[test]
fn directory_source_equals_file_loader() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(NaiveDate, u64)> = (0..184)
        .step_by(3)
        .map(|i| (add_days(start(), i), i * 7 % 11))
        .collect();
    let text = csv(&rows);
    std::fs::write(dir.path().join("c14.csv"), &text).unwrap();
    let entry = ManifestEntry {
        component_id: 14,
        query: "scientific achievements".into(),
        label: "c14".into(),
    };
    let span = DateRange::new(rows[0].0, rows.last().unwrap().0).unwrap();
    let fetched = fetch_series(
        &DirectorySource::new(dir.path()),
        &entry,
        span,
        FillPolicy::Zero,
        &FetchPolicy::default(),
    )
    .unwrap();
    let loaded = load_series(&text, FillPolicy::Zero).unwrap();
    assert_eq!(fetched.values, loaded.values);
    assert_eq!(fetched.start, loaded.start);

    let missing = ManifestEntry {
        component_id: 7,
        query: "q".into(),
        label: "c7".into(),
    };
    let err = fetch_series(
        &DirectorySource::new(dir.path()),
        &missing,
        span,
        FillPolicy::Zero,
        &FetchPolicy::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains('7'), "{err}");
}
