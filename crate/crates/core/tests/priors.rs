use bne_verify::oracle::quadrature_tv;
use bne_verify::priors::Marginal;
use bne_verify::strategies::{pushforward_density_bound, Strategy};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const DRAWS: usize = 1_000_000;
const BINS: usize = 200;

/// Largest excess of a histogram density over `bound`, in units of the bin's
/// three-sigma sampling tolerance (<= 1 means within tolerance).
fn worst_excess(samples: impl Iterator<Item = f64>, bound: f64) -> f64 {
    let mut counts = vec![0usize; BINS];
    for x in samples {
        counts[((x * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / DRAWS as f64;
            let density = p * BINS as f64;
            let tol = 3.0 * (p * (1.0 - p) / DRAWS as f64).sqrt() * BINS as f64;
            (density - bound) / tol.max(f64::MIN_POSITIVE)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn declared_kappa_holds_for_builtin_marginals() {
    let marginals = [
        Marginal::Uniform { a: 0.0, b: 1.0 },
        Marginal::Uniform { a: 0.25, b: 0.75 },
        Marginal::Beta { alpha: 2.0, beta: 5.0 },
        Marginal::Beta { alpha: 3.0, beta: 3.0 },
        Marginal::Beta { alpha: 1.0, beta: 2.0 },
    ];
    for (k, m) in marginals.iter().enumerate() {
        let kappa = m.density_max().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(k as u64);
        let excess = worst_excess((0..DRAWS).map(|_| m.sample(&mut rng)), kappa);
        assert!(excess <= 1.0, "{m:?}: kappa {kappa}, excess {excess}");
    }
}

#[test]
fn pushforward_bound_holds_for_piecewise_strategy() {
    let s = Strategy::piecewise(vec![0.0, 0.3, 1.0], vec![0.0, 0.1, 0.8]).unwrap();
    let m = Marginal::Beta { alpha: 2.0, beta: 2.0 };
    let bound = pushforward_density_bound(m.density_max().unwrap(), &s, 1).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let excess = worst_excess((0..DRAWS).map(|_| s.apply_scalar(m.sample(&mut rng))), bound);
    assert!(excess <= 1.0, "bound {bound}, excess {excess}");
}

#[test]
fn quadrature_refinement_delta_bounds_next_doubling() {
    let tri = |x: f64| if x < 0.5 { 4.0 * x } else { 4.0 - 4.0 * x };
    let ramp = |x: f64| 2.0 * x;
    for points in [16, 64, 256] {
        let coarse = quadrature_tv(&tri, &ramp, 0.0, 1.0, points, &[0.5]).unwrap();
        let fine = quadrature_tv(&tri, &ramp, 0.0, 1.0, 2 * points, &[0.5]).unwrap();
        let finer = quadrature_tv(&tri, &ramp, 0.0, 1.0, 4 * points, &[0.5]).unwrap();
        assert!((fine.value - coarse.value).abs() <= coarse.error_estimate + 1e-15);
        assert!((finer.value - fine.value).abs() <= coarse.error_estimate + 1e-15);
    }
}
