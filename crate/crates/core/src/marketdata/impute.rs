//! Gap filling for missing bars.

use super::panel::OhlcvPanel;
use super::MarketError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImputeMode {
    /// Gaps of at most two days are interpolated, longer ones forward-filled.
    Train,
    /// Forward fill only.
    Eval,
}

/// Longest gap that is linearly interpolated in train mode.
pub const MAX_INTERPOLATED_GAP: usize = 2;

pub fn impute(panel: &OhlcvPanel, mode: ImputeMode) -> Result<OhlcvPanel, MarketError> {
    let boundary = match mode {
        ImputeMode::Train => panel.n_days(),
        ImputeMode::Eval => 0,
    };
    impute_split(panel, boundary)
}

/// Train-mode rules for gaps closed before `train_end`, eval-mode rules after.
///
/// A gap is only interpolated when its right anchor lies before `train_end`,
/// so no value after the boundary influences a filled value.
pub fn impute_split(panel: &OhlcvPanel, train_end: usize) -> Result<OhlcvPanel, MarketError> {
    let mut out = panel.clone();
    for (i, row) in out.bars.iter_mut().enumerate() {
        let Some(first) = row.iter().position(Option::is_some) else {
            return Err(MarketError::Unimputable(panel.tickers[i].clone()));
        };
        let mut t = first + 1;
        while t < row.len() {
            if row[t].is_some() {
                t += 1;
                continue;
            }
            let start = t;
            let mut end = t;
            while end < row.len() && row[end].is_none() {
                end += 1;
            }
            let left = row[start - 1].expect("gap has a left anchor");
            let len = end - start;
            let interpolate = len <= MAX_INTERPOLATED_GAP && end < row.len() && end < train_end;
            for (k, slot) in row[start..end].iter_mut().enumerate() {
                *slot = Some(if interpolate {
                    let right = panel.bars[i][end].expect("right anchor present");
                    left.lerp(&right, (k + 1) as f64 / (len + 1) as f64)
                } else {
                    left
                });
            }
            t = end;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::panel::{Bar, MarketSeries};
    use chrono::NaiveDate;

    fn flat(c: f64) -> Bar {
        Bar { open: c, high: c, low: c, close: c, volume: 100.0 }
    }

    fn panel(closes: &[Option<f64>]) -> OhlcvPanel {
        let n = closes.len();
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        OhlcvPanel {
            tickers: vec!["A".into()],
            sector_names: vec!["S".into()],
            sectors: vec![0],
            dates: (0..n).map(|k| d0 + chrono::Days::new(k as u64)).collect(),
            bars: vec![closes.iter().map(|c| c.map(flat)).collect()],
            missing: vec![closes.iter().map(Option::is_none).collect()],
            market: MarketSeries::default(),
            earnings: vec![],
        }
    }

    fn closes(p: &OhlcvPanel) -> Vec<Option<f64>> {
        p.bars[0].iter().map(|b| b.map(|b| b.close)).collect()
    }

    #[test]
    fn train_interpolates_single_gap() {
        let p = impute(&panel(&[Some(10.0), None, Some(14.0)]), ImputeMode::Train).unwrap();
        assert_eq!(closes(&p), vec![Some(10.0), Some(12.0), Some(14.0)]);
        assert!(p.missing[0][1]);
    }

    #[test]
    fn eval_forward_fills() {
        let p = impute(&panel(&[Some(10.0), None, Some(14.0)]), ImputeMode::Eval).unwrap();
        assert_eq!(closes(&p), vec![Some(10.0), Some(10.0), Some(14.0)]);
    }

    #[test]
    fn long_gap_falls_back_to_forward_fill() {
        let p = impute(&panel(&[Some(10.0), None, None, None, Some(20.0)]), ImputeMode::Train).unwrap();
        assert_eq!(closes(&p), [10.0, 10.0, 10.0, 10.0, 20.0].map(Some).to_vec());
    }

    #[test]
    fn leading_gap_stays_missing() {
        let p = impute(&panel(&[None, Some(3.0), None]), ImputeMode::Train).unwrap();
        assert_eq!(closes(&p), vec![None, Some(3.0), Some(3.0)]);
    }

    #[test]
    fn empty_series_is_unimputable() {
        assert!(matches!(
            impute(&panel(&[None, None]), ImputeMode::Eval),
            Err(MarketError::Unimputable(_))
        ));
    }

    #[test]
    fn gap_closing_after_boundary_is_forward_filled() {
        let p = impute_split(&panel(&[Some(10.0), None, Some(14.0)]), 2).unwrap();
        assert_eq!(closes(&p)[1], Some(10.0));
    }
}
