//! Brute-force and numeric references, independent of the grid and
//! dispersion machinery. Used by tests, acceptance checks and the CLI's
//! `--oracle` diagnostics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ExhaustiveLattice,
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub value: f64,
    pub method: OracleMethod,
    /// Numerical error estimate (refinement delta for quadrature).
    pub error_estimate: f64,
    pub resolution: BTreeMap<String, f64>,
}

/// Normalization tolerance for [`quadrature_tv`] inputs.
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn midpoint(f: &dyn Fn(f64) -> f64, cuts: &[f64], points: usize) -> f64 {
    cuts.windows(2)
        .map(|seg| {
            let h = (seg[1] - seg[0]) / points as f64;
            crate::numeric::pairwise_sum(points, |k| f(seg[0] + (k as f64 + 0.5) * h)) * h
        })
        .sum()
}

fn cuts(lo: f64, hi: f64, breakpoints: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = std::iter::once(lo)
        .chain(breakpoints.iter().copied().filter(|&b| b > lo && b < hi))
        .chain(std::iter::once(hi))
        .collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// Total-variation distance `(1/2) * int |f_a - f_b|` over `[lo, hi]` by the
/// composite midpoint rule with `points` nodes on every segment between
/// consecutive breakpoints. The error estimate is the change when the node
/// count is doubled.
pub fn quadrature_tv(
    density_a: &dyn Fn(f64) -> f64,
    density_b: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    points: usize,
    breakpoints: &[f64],
) -> Result<OracleResult> {
    if !(lo < hi) || points == 0 {
        return Err(invalid("quadrature", "need lo < hi and at least one point"));
    }
    let c = cuts(lo, hi, breakpoints);
    for (name, f) in [("density_a", density_a), ("density_b", density_b)] {
        let mass = midpoint(f, &c, points);
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(invalid(name, format!("non-normalized density: integrates to {mass}")));
        }
    }
    let diff = |x: f64| (density_a(x) - density_b(x)).abs();
    let coarse = 0.5 * midpoint(&diff, &c, points);
    let fine = 0.5 * midpoint(&diff, &c, 2 * points);
    let mut resolution = BTreeMap::new();
    resolution.insert("points_per_segment".into(), points as f64);
    resolution.insert("segments".into(), (c.len() - 1) as f64);
    Ok(OracleResult {
        value: coarse,
        method: OracleMethod::Quadrature,
        error_estimate: (fine - coarse).abs(),
        resolution,
    })
}

/// Size cap for [`exhaustive_wd`]: `n <= 5`, `l <= 3`.
pub const EXHAUSTIVE_MAX_AGENTS: usize = 5;
pub const EXHAUSTIVE_MAX_ITEMS: usize = 3;

/// Optimal XOR allocation by enumerating every choice of "nothing or one
/// non-empty bundle" per agent and discarding item-overlapping choices.
/// Among optimal choices the first in enumeration order is returned, where
/// agent 0 is the most significant digit and "nothing" precedes bundle 1, 2, ...
pub fn exhaustive_wd(bids: &[Vec<f64>], items: usize) -> Result<Vec<Option<usize>>> {
    if bids.len() > EXHAUSTIVE_MAX_AGENTS || items > EXHAUSTIVE_MAX_ITEMS || items == 0 {
        return Err(invalid(
            "exhaustive_wd",
            format!("size cap exceeded: need n <= {EXHAUSTIVE_MAX_AGENTS} and 1 <= l <= {EXHAUSTIVE_MAX_ITEMS}"),
        ));
    }
    let bundles = 1usize << items;
    if let Some(row) = bids.iter().find(|r| r.len() != bundles) {
        return Err(Error::Dimension(format!(
            "bundle bid vector of length {}, expected {bundles}",
            row.len()
        )));
    }
    let n = bids.len();
    let total = bundles.pow(n as u32);
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    let mut choice = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for i in (0..n).rev() {
            choice[i] = c % bundles;
            c /= bundles;
        }
        let mut used = 0usize;
        let mut ok = true;
        for &s in &choice {
            if used & s != 0 {
                ok = false;
                break;
            }
            used |= s;
        }
        if !ok {
            continue;
        }
        let alloc: Vec<Option<usize>> = choice.iter().map(|&s| (s != 0).then_some(s)).collect();
        let value = crate::mechanisms::allocation_value(bids, &alloc);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, alloc));
        }
    }
    Ok(best.expect("the empty allocation is always feasible").1)
}

/// Opponents play `b = c_opp * theta` with uniform valuations; the highest
/// of `n - 1` such bids has CDF `(b / c_opp)^(n-1)` on `[0, c_opp]`.
fn max_bid_cdf(b: f64, c_opp: f64, n: usize) -> f64 {
    if b <= 0.0 {
        0.0
    } else {
        (b / c_opp).min(1.0).powi(n as i32 - 1)
    }
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Interim expected utility of bidding `b` with value `theta` against `n - 1`
/// opponents shading uniform valuations by `c_opp`.
pub fn fpsb_interim_utility(theta: f64, b: f64, c_opp: f64, n: usize) -> f64 {
    (theta - b) * max_bid_cdf(b, c_opp, n)
}

/// Interim best-response utility for value `theta` against the symmetric
/// equilibrium opponents, found numerically (the objective is unimodal on
/// `[0, min(theta, c_opp)]`).
pub fn fpsb_best_response_utility(theta: f64, c_opp: f64, n: usize) -> f64 {
    if theta <= 0.0 {
        return 0.0;
    }
    let hi = theta.min(c_opp);
    let f = |b: f64| fpsb_interim_utility(theta, b, c_opp, n);
    let (_, v) = golden_max(&f, 0.0, hi, 1e-12);
    v.max(f(hi)).max(0.0)
}

/// Ex interim utility loss of agent 0 playing `LinearShade(c)` in a
/// first-price auction with `n` bidders and i.i.d. uniform valuations, when
/// every opponent plays the symmetric equilibrium `((n-1)/n) * theta`.
/// The supremum over `theta` is taken on a dense lattice and refined by
/// golden-section search around the best lattice point.
pub fn analytic_fpsb_loss(n: usize, c: f64) -> OracleResult {
    let c_opp = (n as f64 - 1.0) / n as f64;
    let gain = |theta: f64| {
        fpsb_best_response_utility(theta, c_opp, n) - fpsb_interim_utility(theta, c * theta, c_opp, n)
    };
    let lattice = 2000;
    let (mut best_t, mut best_v) = (0.0, gain(0.0));
    for k in 1..=lattice {
        let t = k as f64 / lattice as f64;
        let v = gain(t);
        if v > best_v {
            best_t = t;
            best_v = v;
        }
    }
    let step = 1.0 / lattice as f64;
    let (t, v) = golden_max(&gain, (best_t - step).max(0.0), (best_t + step).min(1.0), 1e-12);
    if v > best_v {
        best_v = v;
        best_t = t;
    }
    let mut resolution = BTreeMap::new();
    resolution.insert("theta_lattice".into(), lattice as f64);
    resolution.insert("argmax_theta".into(), best_t);
    OracleResult {
        value: best_v.max(0.0),
        method: OracleMethod::ClosedForm,
        error_estimate: 1e-10,
        resolution,
    }
}
