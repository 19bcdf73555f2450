//! Walk-forward recalibration boundaries.

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Out-of-sample block `[start, end)`; `end` is `None` for the final block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: NaiveDate,
    pub end: Option<NaiveDate>,
}

impl Block {
    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && self.end.is_none_or(|e| date < e)
    }
}

/// Boundaries `first + k * years` for `k >= 1`, strictly before `last`.
pub fn block_boundaries(first: NaiveDate, last: NaiveDate, years: u32) -> Result<Vec<NaiveDate>> {
    if years == 0 {
        return Err(CoreError::InvalidArgument("block length must be at least one year".into()));
    }
    let mut out = Vec::new();
    for k in 1.. {
        let b = first
            .checked_add_months(Months::new(12 * years * k))
            .ok_or_else(|| CoreError::InvalidArgument("date overflow".into()))?;
        if b >= last {
            break;
        }
        out.push(b);
    }
    Ok(out)
}

/// Out-of-sample blocks delimited by consecutive boundaries.
pub fn oos_blocks(boundaries: &[NaiveDate]) -> Vec<Block> {
    boundaries
        .iter()
        .enumerate()
        .map(|(i, &start)| Block {
            start,
            end: boundaries.get(i + 1).copied(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn twenty_five_years_give_five_recalibrations() {
        let b = block_boundaries(ymd(1990, 1, 2), ymd(2015, 12, 31), 5).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b[0], ymd(1995, 1, 2));
        assert_eq!(b[4], ymd(2015, 1, 2));
        let blocks = oos_blocks(&b);
        assert!(blocks[0].contains(ymd(1999, 12, 31)));
        assert!(!blocks[0].contains(ymd(2000, 1, 2)));
        assert!(blocks[4].contains(ymd(2015, 12, 31)));
    }

    #[test]
    fn short_history_has_no_boundary() {
        assert!(block_boundaries(ymd(2000, 1, 3), ymd(2003, 1, 1), 5).unwrap().is_empty());
        assert!(block_boundaries(ymd(2000, 1, 3), ymd(2003, 1, 1), 0).is_err());
    }
}
