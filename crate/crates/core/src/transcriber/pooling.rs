//! Frame-to-tatum max pooling windows.

use crate::error::{Error, Result};

/// Half-open frame window `[start, end)` summarized into one tatum.
pub type Window = (usize, usize);

/// Pooling windows for 0-based tatum frame indices `b`.
///
/// Tatum `n` covers frames `t` with `(b[n-1] + b[n]) / 2 <= t < (b[n] + b[n+1]) / 2`,
/// where `b[-1] = b[0]`. The last window extends to `b[N-1] + 1` so that
/// it always contains its own tatum frame.
pub fn tatum_windows(b: &[usize], num_frames: usize) -> Result<Vec<Window>> {
    if b.is_empty() {
        return Err(Error::validation("no tatums to pool"));
    }
    if let Some(w) = b.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::validation(format!(
            "tatum frames must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    if let Some(&last) = b.last().filter(|&&l| l >= num_frames) {
        return Err(Error::validation(format!(
            "tatum frame {last} outside {num_frames} frames"
        )));
    }
    let n = b.len();
    // an integer t satisfies t >= x/2 iff t >= ceil(x/2), and t < x/2 iff
    // t < ceil(x/2)
    let half_up = |a: usize, c: usize| (a + c).div_ceil(2);
    Ok((0..n)
        .map(|i| {
            let start = if i == 0 {
                b[0]
            } else {
                half_up(b[i - 1], b[i])
            };
            let end = if i + 1 == n {
                b[i] + 1
            } else {
                half_up(b[i], b[i + 1])
            };
            (start, end)
        })
        .collect())
}

/// Reference max pooling on a tatum-major copy, `[num_frames, dim]` in,
/// `[windows, dim]` out.
pub fn pool_rows(frames: &[f64], dim: usize, windows: &[Window]) -> Vec<f64> {
    let mut out = Vec::with_capacity(windows.len() * dim);
    for &(s, e) in windows {
        for d in 0..dim {
            out.push(
                (s..e)
                    .map(|t| frames[t * dim + d])
                    .fold(f64::NEG_INFINITY, f64::max),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn midpoint_frame_goes_to_next_tatum() {
        let w = tatum_windows(&[2, 6, 10], 12).unwrap();
        assert_eq!(w, vec![(2, 4), (4, 8), (8, 11)]);
        let w = tatum_windows(&[2, 5, 10], 12).unwrap();
        // (2+5)/2 = 3.5 -> frames 2, 3 for tatum 0
        assert_eq!(w[0], (2, 4));
        assert_eq!(w[1], (4, 8));
    }

    #[test]
    fn spike_lands_in_its_tatum() {
        let b = [0, 4, 8, 12, 16];
        let w = tatum_windows(&b, 20).unwrap();
        let mut frames = vec![0.1; 20];
        frames[13] = 5.0;
        let g = pool_rows(&frames, 1, &w);
        assert_eq!(g, vec![0.1, 0.1, 0.1, 5.0, 0.1]);
        let c = pool_rows(&[0.7; 20], 1, &w);
        assert!(c.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(tatum_windows(&[1, 1, 3], 10).is_err());
        assert!(tatum_windows(&[1, 12], 10).is_err());
        assert!(tatum_windows(&[], 10).is_err());
    }

    fn arb_frames() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::btree_set(0usize..200, 1..40).prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn windows_tile_and_contain_their_tatum(b in arb_frames()) {
            let w = tatum_windows(&b, 200).unwrap();
            for (i, &(s, e)) in w.iter().enumerate() {
                prop_assert!(s <= b[i] && b[i] < e);
                if i > 0 {
                    prop_assert_eq!(w[i - 1].1, s);
                }
            }
        }

        #[test]
        fn pooling_is_max_plus_linear(
            b in arb_frames(),
            a in proptest::collection::vec(-3.0f64..3.0, 200),
            c in proptest::collection::vec(-3.0f64..3.0, 200),
        ) {
            let w = tatum_windows(&b, 200).unwrap();
            let both: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x.max(*y)).collect();
            let lhs = pool_rows(&both, 1, &w);
            let pa = pool_rows(&a, 1, &w);
            let pc = pool_rows(&c, 1, &w);
            for i in 0..lhs.len() {
                prop_assert_eq!(lhs[i], pa[i].max(pc[i]));
            }
        }
    }
}
