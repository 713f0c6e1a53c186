use bne_verify::bounds::{dispersion_count_fpsb, eps_disp, eps_hoeffding, eps_pdim_ex_ante, eps_pdim_interim};
use proptest::prelude::*;

/// Certified part of the ex interim bound for the single-item auction.
fn interim_terms(n: usize, w: f64, delta: f64) -> f64 {
    let v = dispersion_count_fpsb(w, n, 2, 1.0, 2.0, delta, 1).unwrap();
    eps_pdim_interim(n, 2.0, 2, delta).unwrap() + 4.0 * eps_disp(w, n, v, 1.0).0
}

#[test]
fn total_nonincreasing_in_n() {
    let mut prev = f64::INFINITY;
    let mut n = 1_000usize;
    while n <= 1_000_000 {
        let t = interim_terms(n, 0.01, 0.05 / 3.0);
        assert!(t <= prev, "N = {n}: {t} > {prev}");
        prev = t;
        n = n * 5 / 4;
    }
}

proptest! {
    #[test]
    fn terms_shrink_with_more_samples(n in 10usize..1_000_000, d in 1.0f64..20.0, delta in 1e-3f64..0.3) {
        let m = 2 * n;
        prop_assert!(eps_pdim_interim(m, d, 3, delta).unwrap() <= eps_pdim_interim(n, d, 3, delta).unwrap());
        prop_assert!(eps_hoeffding(m, 3, delta).unwrap() <= eps_hoeffding(n, 3, delta).unwrap());
        prop_assert!(eps_pdim_ex_ante(m, d, 3, delta, 4).unwrap() <= eps_pdim_ex_ante(n, d, 3, delta, 4).unwrap());
    }

    #[test]
    fn smaller_delta_costs_more(n in 10usize..1_000_000, a in 1e-4f64..0.3, b in 1e-4f64..0.3) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(eps_hoeffding(n, 2, lo).unwrap() >= eps_hoeffding(n, 2, hi).unwrap());
        prop_assert!(eps_pdim_interim(n, 2.0, 2, lo).unwrap() >= eps_pdim_interim(n, 2.0, 2, hi).unwrap());
    }

    #[test]
    fn clamped_disp_is_at_most_two(x in 0.0f64..=1.0, l in 0.0f64..=1.0, n in 1usize..100_000, excess in 0.0f64..1e9) {
        let (value, clamped) = eps_disp(x, n, n as f64 + excess, l);
        prop_assert!(value <= 2.0);
        prop_assert_eq!(clamped, excess > 0.0);
    }
}
