//! Summaries for plot-ready uncertainty tables.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Linear interpolation between order statistics (`(n − 1)·q` position).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
        })
    }
}

/// `(lo, hi, count)` for `bins` equal-width bins over `[lo, hi]`; the last
/// bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let edge = |k: usize| lo + (hi - lo) * k as f64 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if (lo..=hi).contains(&v) {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (edge(k), edge(k + 1), c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_small_sets() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.n, s.mean, s.median), (4, 2.5, 2.5));
        assert_eq!((s.q25, s.q75), (1.75, 3.25));
        assert_eq!(Summary::of(&[7.0]).unwrap().q75, 7.0);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn histogram_counts_edges() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0, 1.5], 2, 0.0, 1.0);
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!((h[1].0, h[1].1), (0.5, 1.0));
    }
}
