mod common;

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Months, Utc};
use common::fixture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent grouping: format each timestamp as `YYYY-MM`.
fn month_oracle(now: DateTime<Utc>, months: u32, created: &[DateTime<Utc>]) -> Vec<(String, usize)> {
    let mut buckets: BTreeMap<String, usize> = (0..months)
        .map(|back| {
            (
                now.checked_sub_months(Months::new(back))
                    .unwrap()
                    .format("%Y-%m")
                    .to_string(),
                0,
            )
        })
        .collect();
    for at in created {
        if let Some(n) = buckets.get_mut(&at.format("%Y-%m").to_string()) {
            *n += 1;
        }
    }
    buckets.into_iter().collect()
}

#[test]
fn three_items_over_five_months() {
    let f = fixture();
    let sender = f.user("sender@example.com", "Sam", "Sender");
    let now = f.platform.now();
    for back in [0u32, 2, 4] {
        f.clock.set(now.checked_sub_months(Months::new(back)).unwrap());
        f.send(&sender, (48.1, 17.1), (48.2, 17.2), ("Rita", "R", "rita@example.com"));
    }
    f.clock.set(now);
    let report = f.platform.statistics(&sender, 5).unwrap();
    assert_eq!(report.months.len(), 5);
    assert_eq!(report.total, 3);
    assert_eq!(report.months.iter().map(|m| m.count).sum::<usize>(), 3);
    assert_eq!(
        report.months.iter().map(|m| m.count).collect::<Vec<_>>(),
        [1, 0, 1, 0, 1]
    );
    assert_eq!(report.months.last().unwrap().month, "2026-06");

    let other = f.user("other@example.com", "Oli", "Other");
    let empty = f.platform.statistics(&other, 5).unwrap();
    assert!(empty.months.iter().all(|m| m.count == 0));
}

#[test]
fn months_out_of_range() {
    let f = fixture();
    let sender = f.user("sender@example.com", "Sam", "Sender");
    for months in [0, 61] {
        assert_eq!(
            f.platform.statistics(&sender, months).unwrap_err().code(),
            "validation_error"
        );
    }
    assert!(f.platform.statistics(&sender, 60).is_ok());
}

#[test]
fn random_fixtures_match_month_grouping() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let f = fixture();
        let sender = f.user("sender@example.com", "Sam", "Sender");
        let now = f.platform.now();
        let mut created = Vec::new();
        for _ in 0..rng.gen_range(0..40) {
            let at = now - Duration::seconds(rng.gen_range(0..3 * 365 * 86_400));
            f.clock.set(at);
            f.send(&sender, (48.1, 17.1), (48.2, 17.2), ("Rita", "R", "rita@example.com"));
            created.push(at);
        }
        f.clock.set(now);
        let months = rng.gen_range(1..=60);
        let report = f.platform.statistics(&sender, months).unwrap();
        let got: Vec<_> = report.months.iter().map(|m| (m.month.clone(), m.count)).collect();
        let expected = month_oracle(now, months, &created);
        assert_eq!(got, expected);
        assert_eq!(report.total, expected.iter().map(|(_, n)| n).sum::<usize>());
    }
}
