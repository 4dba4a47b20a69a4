//! Onset F-measure with tolerance matching and the tatum-level error rate
//! (an edit distance between score matrices).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{times_of, DrumScore, Instrument, OnsetEvent, NUM_INSTRUMENTS};

/// Default matching tolerance in seconds.
pub const TOLERANCE: f64 = 0.050;

// Absorbs representation error so that a 50 ms offset written in decimal
// still counts as inside a 50 ms tolerance.
const TOLERANCE_SLACK: f64 = 1e-9;

/// Number of one-to-one matches between two sorted onset lists, pairing
/// each list in time order.
pub fn count_matches(est: &[f64], gt: &[f64], tolerance: f64) -> usize {
    let tol = tolerance + TOLERANCE_SLACK;
    let (mut i, mut j, mut hits) = (0, 0, 0);
    while i < est.len() && j < gt.len() {
        let d = est[i] - gt[j];
        if d.abs() <= tol {
            hits += 1;
            i += 1;
            j += 1;
        } else if d < 0.0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    hits
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OnsetCounts {
    /// Estimated onsets.
    pub n_e: usize,
    /// Ground-truth onsets.
    pub n_g: usize,
    /// Correctly estimated onsets.
    pub n_c: usize,
}

impl OnsetCounts {
    pub fn add(&mut self, other: OnsetCounts) {
        self.n_e += other.n_e;
        self.n_g += other.n_g;
        self.n_c += other.n_c;
    }

    /// Precision, recall and F-measure in percent. An empty side scores
    /// 100 when the other side is also empty and 0 otherwise.
    pub fn prf(&self) -> Prf {
        let rate = |num: usize, den: usize, other: usize| {
            if den > 0 {
                100.0 * num as f64 / den as f64
            } else if other == 0 {
                100.0
            } else {
                0.0
            }
        };
        let precision = rate(self.n_c, self.n_e, self.n_g);
        let recall = rate(self.n_c, self.n_g, self.n_e);
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f_measure,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Matches onset times within `tolerance` seconds. Inputs need not be
/// sorted.
pub fn f_measure(est: &[f64], gt: &[f64], tolerance: f64) -> (OnsetCounts, Prf) {
    let mut e = est.to_vec();
    let mut g = gt.to_vec();
    e.sort_by(f64::total_cmp);
    g.sort_by(f64::total_cmp);
    let counts = OnsetCounts {
        n_e: e.len(),
        n_g: g.len(),
        n_c: count_matches(&e, &g, tolerance),
    };
    (counts, counts.prf())
}

/// Per-instrument counts for two event lists.
pub fn event_counts(
    est: &[OnsetEvent],
    gt: &[OnsetEvent],
    tolerance: f64,
) -> [OnsetCounts; NUM_INSTRUMENTS] {
    Instrument::ALL.map(|inst| f_measure(&times_of(est, inst), &times_of(gt, inst), tolerance).0)
}

/// Edit cost between two binary column sequences of equal height `m`.
/// Insertion and deletion cost `m`; substitution costs the Manhattan
/// distance between columns.
pub fn ter_columns(y: &[Vec<u8>], y_hat: &[Vec<u8>]) -> Result<u64> {
    let m = y.first().or(y_hat.first()).map_or(0, |c| c.len());
    if let Some(c) = y.iter().chain(y_hat).find(|c| c.len() != m) {
        return Err(Error::validation(format!(
            "score heights differ: {} vs {m} instruments",
            c.len()
        )));
    }
    let m = m as u64;
    let (n, nh) = (y.len(), y_hat.len());
    // rolling rows of the (n+1) x (nh+1) table
    let mut prev: Vec<u64> = (0..=nh as u64).map(|j| j * m).collect();
    let mut cur = vec![0u64; nh + 1];
    for i in 1..=n {
        cur[0] = i as u64 * m;
        for j in 1..=nh {
            let sub: u64 = y[i - 1]
                .iter()
                .zip(&y_hat[j - 1])
                .map(|(a, b)| a.abs_diff(*b) as u64)
                .sum();
            cur[j] = (prev[j - 1] + sub).min(prev[j] + m).min(cur[j - 1] + m);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[nh])
}

/// Tatum-level error rate between a reference and an estimated score.
pub fn ter(y: &DrumScore, y_hat: &DrumScore) -> u64 {
    let cols = |s: &DrumScore| -> Vec<Vec<u8>> {
        s.columns()
            .iter()
            .map(|c| c.iter().map(|&b| b as u8).collect())
            .collect()
    };
    ter_columns(&cols(y), &cols(y_hat)).expect("scores share the instrument count")
}

/// One piece prepared for evaluation.
#[derive(Clone, Debug)]
pub struct PieceEval {
    pub name: String,
    pub est_onsets: Vec<OnsetEvent>,
    pub gt_onsets: Vec<OnsetEvent>,
    pub est_score: DrumScore,
    pub gt_score: DrumScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentMetrics {
    pub instrument: String,
    #[serde(flatten)]
    pub counts: OnsetCounts,
    #[serde(flatten)]
    pub prf: Prf,
}

impl InstrumentMetrics {
    fn new(label: &str, counts: OnsetCounts) -> Self {
        InstrumentMetrics {
            instrument: label.to_string(),
            counts,
            prf: counts.prf(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pieces: usize,
    pub per_instrument: Vec<InstrumentMetrics>,
    pub total: InstrumentMetrics,
    /// Summed edit cost over pieces.
    pub ter: u64,
    /// Edit cost divided by the number of reference tatums.
    pub ter_per_tatum: f64,
    pub reference_tatums: usize,
}

/// Pools onsets across pieces before computing P/R/F; edit costs are
/// computed per piece and summed.
pub fn corpus_metrics(pieces: &[PieceEval], tolerance: f64) -> Result<MetricsReport> {
    if pieces.is_empty() {
        return Err(Error::validation("cannot evaluate an empty corpus"));
    }
    let mut per = [OnsetCounts::default(); NUM_INSTRUMENTS];
    let mut ter_sum = 0;
    let mut tatums = 0;
    for p in pieces {
        for (acc, c) in per
            .iter_mut()
            .zip(event_counts(&p.est_onsets, &p.gt_onsets, tolerance))
        {
            acc.add(c);
        }
        ter_sum += ter(&p.gt_score, &p.est_score);
        tatums += p.gt_score.num_tatums();
    }
    let mut total = OnsetCounts::default();
    per.iter().for_each(|c| total.add(*c));
    Ok(MetricsReport {
        pieces: pieces.len(),
        per_instrument: Instrument::ALL
            .iter()
            .zip(per)
            .map(|(i, c)| InstrumentMetrics::new(i.abbrev(), c))
            .collect(),
        total: InstrumentMetrics::new("total", total),
        ter: ter_sum,
        ter_per_tatum: if tatums > 0 {
            ter_sum as f64 / tatums as f64
        } else {
            0.0
        },
        reference_tatums: tatums,
    })
}

impl MetricsReport {
    /// Plain-text table: per-instrument F, total P/R/F, TER.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7} {:>8} {:>9}",
            "method", "BD F", "SD F", "HH F", "P", "R", "F", "TER", "TER/tatum"
        );
        let f = |i: usize| self.per_instrument[i].prf.f_measure;
        let _ = writeln!(
            out,
            "{:<16} {:>6.1} {:>6.1} {:>6.1} {:>7.1} {:>7.1} {:>7.1} {:>8} {:>9.3}",
            label,
            f(0),
            f(1),
            f(2),
            self.total.prf.precision,
            self.total.prf.recall,
            self.total.prf.f_measure,
            self.ter,
            self.ter_per_tatum
        );
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Minimum over all monotone column matchings: unmatched columns are
    /// inserted or deleted at cost `m` each.
    fn ter_brute(y: &[Vec<u8>], y_hat: &[Vec<u8>], m: u64) -> u64 {
        fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
            (0u32..1 << n)
                .filter(|s| s.count_ones() as usize == k)
                .map(|s| (0..n).filter(|i| s >> i & 1 == 1).collect())
                .collect()
        }
        let (n, nh) = (y.len(), y_hat.len());
        let mut best = u64::MAX;
        for k in 0..=n.min(nh) {
            for a in subsets(n, k) {
                for b in subsets(nh, k) {
                    let sub: u64 = a
                        .iter()
                        .zip(&b)
                        .map(|(&i, &j)| {
                            y[i].iter()
                                .zip(&y_hat[j])
                                .map(|(p, q)| p.abs_diff(*q) as u64)
                                .sum::<u64>()
                        })
                        .sum();
                    best = best.min(sub + m * ((n - k) + (nh - k)) as u64);
                }
            }
        }
        best
    }

    fn cols(bits: &[[u8; 3]]) -> Vec<Vec<u8>> {
        bits.iter().map(|c| c.to_vec()).collect()
    }

    #[test]
    fn ter_base_cases() {
        let y = cols(&[[1, 0, 1], [0, 1, 1]]);
        assert_eq!(ter_columns(&y, &[]).unwrap(), 6);
        assert_eq!(ter_columns(&[], &y).unwrap(), 6);
        assert_eq!(ter_columns(&y, &y).unwrap(), 0);
        assert_eq!(
            ter_columns(&cols(&[[1, 0, 0]]), &cols(&[[0, 1, 0]])).unwrap(),
            2
        );
        assert!(ter_columns(&y, &[vec![1, 0]]).is_err());
    }

    #[test]
    fn f_measure_fixtures() {
        let gt = [1.0, 2.0, 3.0, 4.0];
        let (c, prf) = f_measure(&[1.01, 3.0], &gt, TOLERANCE);
        assert_eq!(c.n_c, 2);
        assert!((prf.precision - 100.0).abs() < 1e-9);
        assert!((prf.recall - 50.0).abs() < 1e-9);
        assert!((prf.f_measure - 66.666_666).abs() < 1e-3);

        let (c, prf) = f_measure(&[1.06], &[1.0], TOLERANCE);
        assert_eq!(c.n_c, 0);
        assert_eq!(prf.f_measure, 0.0);

        assert_eq!(f_measure(&[1.049], &[1.0], TOLERANCE).0.n_c, 1);
        assert_eq!(f_measure(&[1.051], &[1.0], TOLERANCE).0.n_c, 0);
        assert_eq!(f_measure(&[1.05], &[1.0], TOLERANCE).0.n_c, 1);
        assert_eq!(f_measure(&[], &[], TOLERANCE).1.f_measure, 100.0);
        assert_eq!(f_measure(&[1.0], &[], TOLERANCE).1.f_measure, 0.0);
    }

    #[test]
    fn one_estimate_matches_one_reference() {
        let (c, _) = f_measure(&[1.0], &[0.98, 1.02], TOLERANCE);
        assert_eq!(c.n_c, 1);
        let (c, _) = f_measure(&[0.96, 1.0, 1.04], &[0.98, 1.02], TOLERANCE);
        assert_eq!(c.n_c, 2);
    }

    fn piece(est: Vec<OnsetEvent>, gt: Vec<OnsetEvent>) -> PieceEval {
        PieceEval {
            name: String::new(),
            est_onsets: est,
            gt_onsets: gt,
            est_score: DrumScore::new(4),
            gt_score: DrumScore::new(4),
        }
    }

    #[test]
    fn corpus_pools_counts() {
        let ev = |t| OnsetEvent::new(Instrument::BassDrum, t);
        let good = piece(vec![ev(1.0), ev(2.0)], vec![ev(1.0), ev(2.0)]);
        let bad = piece(vec![ev(5.0), ev(6.0)], vec![ev(1.0), ev(2.0)]);
        let single = corpus_metrics(std::slice::from_ref(&good), TOLERANCE).unwrap();
        assert_eq!(single.total.prf.f_measure, 100.0);
        let r = corpus_metrics(&[good, bad], TOLERANCE).unwrap();
        assert_eq!(
            r.total.counts,
            OnsetCounts {
                n_e: 4,
                n_g: 4,
                n_c: 2
            }
        );
        assert!((r.total.prf.f_measure - 50.0).abs() < 1e-9);
        assert!(corpus_metrics(&[], TOLERANCE).is_err());
        assert!(r.to_table("x").lines().count() == 2);
    }

    #[test]
    fn ter_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (n, nh) = (rng.random_range(0..=6), rng.random_range(0..=6));
            let mut gen = |n: usize| -> Vec<Vec<u8>> {
                (0..n)
                    .map(|_| (0..3).map(|_| rng.random_range(0..2u8)).collect())
                    .collect()
            };
            let a = gen(n);
            let b = gen(nh);
            assert_eq!(ter_columns(&a, &b).unwrap(), ter_brute(&a, &b, 3));
        }
    }

    fn arb_cols(max: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(0u8..2, 3), 0..=max)
    }

    proptest! {
        #[test]
        fn ter_is_a_metric(a in arb_cols(6), b in arb_cols(6), c in arb_cols(6)) {
            let d = |x: &[Vec<u8>], y: &[Vec<u8>]| ter_columns(x, y).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &b) == 0, a == b);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert!(d(&a, &b) <= 3 * a.len().max(b.len()) as u64);
        }

        #[test]
        fn f_measure_swaps_precision_and_recall(
            est in proptest::collection::vec(0.0f64..5.0, 0..20),
            gt in proptest::collection::vec(0.0f64..5.0, 0..20),
        ) {
            let (_, ab) = f_measure(&est, &gt, TOLERANCE);
            let (_, ba) = f_measure(&gt, &est, TOLERANCE);
            prop_assert!((ab.precision - ba.recall).abs() < 1e-9);
            prop_assert!((ab.recall - ba.precision).abs() < 1e-9);
            prop_assert!((ab.f_measure - ba.f_measure).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&ab.f_measure));
        }
    }
}
