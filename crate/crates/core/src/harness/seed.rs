use chrono::{NaiveDate, Utc};

/// Whole days from 1970-01-01 to `date`; negative before the epoch.
pub fn daily_seed(date: NaiveDate) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    date.signed_duration_since(epoch).num_days()
}

/// The seed handed to test children as `GRADER_SEED`.
///
/// Each test runs in a fresh process, so by default every test sees the same
/// seed. With `offset_by_test_index` the n-th test (0-based) gets `seed + n`
/// instead, which keeps tests from drawing identical random values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPolicy {
    pub date: NaiveDate,
    pub seed: i64,
    pub offset_by_test_index: bool,
}

impl SeedPolicy {
    pub fn for_date(date: NaiveDate) -> Self {
        Self {
            date,
            seed: daily_seed(date),
            offset_by_test_index: false,
        }
    }

    pub fn today() -> Self {
        Self::for_date(Utc::now().date_naive())
    }

    pub fn seed_for(&self, test_index: usize) -> i64 {
        if self.offset_by_test_index {
            self.seed + test_index as i64
        } else {
            self.seed
        }
    }
}
