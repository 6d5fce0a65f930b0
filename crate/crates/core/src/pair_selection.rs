//! Distance-based pair selection on training-window returns.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{PricePanel, SecurityId};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("return series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("need at least 2 securities, got {0}")]
    TooFewSecurities(usize),
}

/// A candidate pair, stored with `sec_i < sec_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub sec_i: SecurityId,
    pub sec_j: SecurityId,
    pub msd: f64,
    pub coint_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub retained: bool,
    /// Why the pair was rejected or skipped, when it was.
    pub reason: Option<String>,
    /// Free-text manual review grade (e.g. great / average / poor).
    pub review_label: Option<String>,
}

impl PairCandidate {
    pub fn new(a: SecurityId, b: SecurityId, msd: f64) -> Self {
        let (sec_i, sec_j) = if a <= b { (a, b) } else { (b, a) };
        PairCandidate {
            sec_i,
            sec_j,
            msd,
            coint_stat: None,
            p_value: None,
            retained: false,
            reason: None,
            review_label: None,
        }
    }

    /// Stable textual key, `sec_i/sec_j`.
    pub fn key(&self) -> String {
        format!("{}/{}", self.sec_i, self.sec_j)
    }

    fn rank_cmp(&self, other: &Self) -> Ordering {
        self.msd
            .total_cmp(&other.msd)
            .then_with(|| self.sec_i.cmp(&other.sec_i))
            .then_with(|| self.sec_j.cmp(&other.sec_j))
    }
}

impl fmt::Display for PairCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.sec_i, self.sec_j)
    }
}

/// Mean squared distance between two return series.
pub fn msd(returns_i: &[f64], returns_j: &[f64]) -> Result<f64, SelectionError> {
    if returns_i.len() != returns_j.len() {
        return Err(SelectionError::LengthMismatch(returns_i.len(), returns_j.len()));
    }
    let n = returns_i.len();
    if n < 2 {
        return Err(SelectionError::TooShort(n));
    }
    let sum: f64 = returns_i.iter().zip(returns_j).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / n as f64)
}

/// Every pair scored on the rows where both returns are defined, sorted by
/// ascending MSD with ties broken by `(sec_i, sec_j)`.
pub fn rank_pairs(train: &PricePanel) -> Result<Vec<PairCandidate>, SelectionError> {
    let n = train.n_securities();
    if n < 2 {
        return Err(SelectionError::TooFewSecurities(n));
    }
    let index_pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut ranked: Vec<PairCandidate> = index_pairs
        .par_iter()
        .filter_map(|&(a, b)| {
            let (ra, rb): (Vec<f64>, Vec<f64>) = train
                .returns(a)
                .iter()
                .zip(train.returns(b))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| (*x, *y))
                .unzip();
            let d = msd(&ra, &rb).ok()?;
            Some(PairCandidate::new(
                train.securities()[a].clone(),
                train.securities()[b].clone(),
                d,
            ))
        })
        .collect();
    ranked.sort_by(PairCandidate::rank_cmp);
    Ok(ranked)
}

/// Greedy disjoint matching: walk the ranking and accept a pair only when
/// neither security has been used yet.
pub fn greedy_disjoint(ranked: &[PairCandidate], max_pairs: usize) -> Vec<PairCandidate> {
    let mut used: HashSet<&SecurityId> = HashSet::new();
    let mut out = Vec::new();
    for p in ranked {
        if out.len() >= max_pairs {
            break;
        }
        if used.contains(&p.sec_i) || used.contains(&p.sec_j) {
            continue;
        }
        used.insert(&p.sec_i);
        used.insert(&p.sec_j);
        out.push(p.clone());
    }
    out
}

pub fn select_pairs(train: &PricePanel, max_pairs: usize) -> Result<Vec<PairCandidate>, SelectionError> {
    if train.n_dates() < 3 {
        // first row carries no return in a freshly built panel
        return Err(SelectionError::TooShort(train.n_dates().saturating_sub(1)));
    }
    Ok(greedy_disjoint(&rank_pairs(train)?, max_pairs))
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    sec_i: String,
    sec_j: String,
    msd: f64,
    coint_stat: Option<f64>,
    p_value: Option<f64>,
    retained: bool,
    reason: Option<String>,
    review_label: Option<String>,
}

pub fn write_pair_table(path: &Path, pairs: &[PairCandidate]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for p in pairs {
        w.serialize(PairRow {
            sec_i: p.sec_i.0.clone(),
            sec_j: p.sec_j.0.clone(),
            msd: p.msd,
            coint_stat: p.coint_stat,
            p_value: p.p_value,
            retained: p.retained,
            reason: p.reason.clone(),
            review_label: p.review_label.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pair_table(path: &Path) -> Result<Vec<PairCandidate>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<PairRow>()
        .map(|row| {
            let row = row?;
            Ok(PairCandidate {
                coint_stat: row.coint_stat,
                p_value: row.p_value,
                retained: row.retained,
                reason: row.reason.filter(|s| !s.is_empty()),
                review_label: row.review_label.filter(|s| !s.is_empty()),
                ..PairCandidate::new(SecurityId(row.sec_i), SecurityId(row.sec_j), row.msd)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel_from_returns(ids: &[&str], returns: &[Vec<f64>]) -> PricePanel {
        let n = returns[0].len() + 1;
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let dates = (0..n as u64).map(|i| start + chrono::Days::new(i)).collect();
        let closes = returns
            .iter()
            .map(|r| {
                let mut c = vec![100.0];
                for x in r {
                    let last = *c.last().unwrap();
                    c.push(last * (1.0 + x));
                }
                c
            })
            .collect();
        PricePanel::from_closes(dates, ids.iter().map(|s| SecurityId::new(*s)).collect(), closes).unwrap()
    }

    #[test]
    fn msd_basics() {
        let x = [0.01, -0.02, 0.03];
        assert_eq!(msd(&x, &x).unwrap(), 0.0);
        let d = msd(&[0.02, 0.00], &[0.00, 0.02]).unwrap();
        assert!((d - 0.0004).abs() < 1e-15);
        assert_eq!(msd(&[0.1], &[0.2]), Err(SelectionError::TooShort(1)));
        assert_eq!(msd(&[0.1, 0.2], &[0.2]), Err(SelectionError::LengthMismatch(2, 1)));
    }

    #[test]
    fn msd_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..50).map(|_| rng.random_range(-0.05..0.05)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-0.05..0.05)).collect();
        assert_eq!(msd(&a, &b).unwrap(), msd(&b, &a).unwrap());
    }

    #[test]
    fn two_securities_one_pair() {
        let p = panel_from_returns(&["B", "A"], &[vec![0.01, 0.02, -0.01], vec![0.0, 0.01, 0.0]]);
        let pairs = select_pairs(&p, 10).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].sec_i, SecurityId::new("A"));
        assert_eq!(pairs[0].sec_j, SecurityId::new("B"));
    }

    #[test]
    fn too_few_securities() {
        let p = panel_from_returns(&["A"], &[vec![0.01, 0.02]]);
        assert_eq!(select_pairs(&p, 3), Err(SelectionError::TooFewSecurities(1)));
    }

    #[test]
    fn greedy_skips_overlapping_second_best() {
        // hand-traced 4x4 table: d(A,B)=0.1 < d(A,C)=0.2 < d(C,D)=0.3 < ...
        // (A,C) shares A with the winner, so the second pick is (C,D).
        let mk = |a: &str, b: &str, d: f64| PairCandidate::new(SecurityId::new(a), SecurityId::new(b), d);
        let mut table = vec![
            mk("A", "B", 0.1),
            mk("A", "C", 0.2),
            mk("C", "D", 0.3),
            mk("B", "D", 0.35),
            mk("A", "D", 0.4),
            mk("B", "C", 0.5),
        ];
        table.sort_by(PairCandidate::rank_cmp);
        let chosen = greedy_disjoint(&table, 10);
        let keys: Vec<String> = chosen.iter().map(|p| p.key()).collect();
        assert_eq!(keys, ["A/B", "C/D"]);
    }

    #[test]
    fn ties_break_on_ids() {
        let mk = |a: &str, b: &str| PairCandidate::new(SecurityId::new(a), SecurityId::new(b), 0.5);
        let mut table = [mk("C", "D"), mk("B", "A"), mk("A", "C")];
        table.sort_by(PairCandidate::rank_cmp);
        let keys: Vec<String> = table.iter().map(|p| p.key()).collect();
        assert_eq!(keys, ["A/B", "A/C", "C/D"]);
    }

    #[test]
    fn max_pairs_caps_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ids = ["A", "B", "C", "D", "E", "F"];
        let rets: Vec<Vec<f64>> = ids
            .iter()
            .map(|_| (0..40).map(|_| rng.random_range(-0.03..0.03)).collect())
            .collect();
        let p = panel_from_returns(&ids, &rets);
        assert_eq!(select_pairs(&p, 2).unwrap().len(), 2);
        assert_eq!(select_pairs(&p, 10).unwrap().len(), 3);
    }

    #[test]
    fn pair_table_round_trip() {
        let mut p = PairCandidate::new(SecurityId::new("X"), SecurityId::new("Y"), 0.00012345678901234);
        p.coint_stat = Some(-12.0389);
        p.p_value = Some(0.0);
        p.retained = true;
        let mut q = PairCandidate::new(SecurityId::new("P"), SecurityId::new("Q"), 0.5);
        q.reason = Some("p-value 0.9779 >= alpha".into());
        q.review_label = Some("poor".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_pair_table(&path, &[p.clone(), q.clone()]).unwrap();
        assert_eq!(read_pair_table(&path).unwrap(), vec![p, q]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn selection_invariants(seed in 0u64..10_000, n_sec in 2usize..9, perm_seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ids: Vec<String> = (0..n_sec).map(|k| format!("S{k}")).collect();
                let rets: Vec<Vec<f64>> = ids.iter()
                    .map(|_| (0..30).map(|_| rng.random_range(-0.03..0.03)).collect())
                    .collect();
                let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
                let chosen = select_pairs(&panel_from_returns(&refs, &rets), usize::MAX).unwrap();

                let mut seen = HashSet::new();
                for p in &chosen {
                    prop_assert!(p.sec_i < p.sec_j);
                    prop_assert!(seen.insert(p.sec_i.clone()));
                    prop_assert!(seen.insert(p.sec_j.clone()));
                }
                for w in chosen.windows(2) {
                    prop_assert!(w[0].msd <= w[1].msd);
                }

                // permuting input column order leaves the selection unchanged
                let mut order: Vec<usize> = (0..n_sec).collect();
                let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
                for i in (1..n_sec).rev() {
                    order.swap(i, prng.random_range(0..=i));
                }
                let ids2: Vec<&str> = order.iter().map(|&k| refs[k]).collect();
                let rets2: Vec<Vec<f64>> = order.iter().map(|&k| rets[k].clone()).collect();
                let chosen2 = select_pairs(&panel_from_returns(&ids2, &rets2), usize::MAX).unwrap();
                let keys = |v: &[PairCandidate]| v.iter().map(|p| p.key()).collect::<Vec<_>>();
                prop_assert_eq!(keys(&chosen), keys(&chosen2));
            }
        }
    }
}
