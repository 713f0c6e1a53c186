//! Deterministic reductions and the parallel/sequential execution switch.
//!
//! Every empirical mean in the crate goes through [`pairwise_sum`], whose
//! association order depends only on the number of terms. Work is spread over
//! threads at the granularity of whole sums (grid points, cells, records), never
//! inside a sum, so results are bit-identical for any worker count.

const LEAF: usize = 8;

/// Pairwise (tree) summation of `f(0) + ... + f(len - 1)`.
pub fn pairwise_sum<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= LEAF {
            let mut acc = 0.0;
            for j in lo..hi {
                acc += f(j);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, len, &f)
}

/// Pairwise mean; `0.0` for an empty range.
pub fn pairwise_mean<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    if len == 0 {
        return 0.0;
    }
    pairwise_sum(len, f) / len as f64
}

/// How independent work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// behaves like `Sequential`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Evaluates `f` on `0..len` and collects the results in index order.
    pub fn map_range<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..len).into_par_iter().map(f).collect()
            }
            _ => (0..len).map(f).collect(),
        }
    }
}

/// Index of the first maximum (ties resolve to the lowest index). NaN entries are skipped.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(k),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_small_integers() {
        assert_eq!(pairwise_sum(100, |j| j as f64), 4950.0);
        assert_eq!(pairwise_sum(0, |_| 1.0), 0.0);
        assert_eq!(pairwise_mean(0, |_| 1.0), 0.0);
    }

    #[test]
    fn pairwise_beats_naive_on_cancellation() {
        let n = 1_000_000;
        let s = pairwise_sum(n, |_| 0.1);
        assert!((s - 100_000.0).abs() < 1e-6);
    }

    #[test]
    fn parallel_map_preserves_order() {
        let a = Execution::Sequential.map_range(1000, |j| j * 2);
        let b = Execution::Parallel.map_range(1000, |j| j * 2);
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first(&[]), None);
        assert_eq!(argmax_first(&[f64::NAN, 0.5]), Some(1));
    }
}
