//! Ex post utilities for the supported sealed-bid auction formats.
//!
//! Utilities are quasilinear: `u_i = x_i . theta_i - p_i`, divided by the game's
//! utility scale so that they lie in `[-1, 1]`.
//!
//! Tie handling:
//! * single item: the winner must bid strictly more than every opponent, so an
//!   exact tie for the highest bid leaves the item unsold;
//! * multi-unit: all strictly positive unit bids are ranked by
//!   `(bid desc, agent asc, index asc)` and the first `m` win; zero bids never win;
//! * combinatorial: among optimal assignments the one chosen is the first in
//!   agent-then-bundle order, with "no bundle" preferred over any bundle.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::GameConfig;

/// Largest item count accepted for the combinatorial auction (the exact solver
/// keeps a table of `n * 2^items` entries).
pub const MAX_ITEMS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismSpec {
    FirstPriceSingleItem,
    /// First-price combinatorial auction over `items` goods with XOR bundle bids.
    FirstPriceCombinatorial { items: usize },
    /// Pay-as-bid auction of `units` identical units.
    Discriminatory { units: usize },
    /// Uniform-price auction of `units` identical units.
    UniformPrice { units: usize },
}

impl MechanismSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MechanismSpec::FirstPriceSingleItem => Ok(()),
            MechanismSpec::FirstPriceCombinatorial { items } => {
                if items == 0 || items > MAX_ITEMS {
                    Err(invalid(
                        "mechanism.items",
                        format!("must lie in 1..={MAX_ITEMS}, got {items}"),
                    ))
                } else {
                    Ok(())
                }
            }
            MechanismSpec::Discriminatory { units } | MechanismSpec::UniformPrice { units } => {
                if units == 0 {
                    Err(invalid("mechanism.units", "must be at least 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Dimension of an agent's valuation, observation and bid vectors.
    pub fn action_dim(&self) -> usize {
        match *self {
            MechanismSpec::FirstPriceSingleItem => 1,
            MechanismSpec::FirstPriceCombinatorial { items } => 1 << items,
            MechanismSpec::Discriminatory { units } | MechanismSpec::UniformPrice { units } => {
                units
            }
        }
    }

    /// Largest absolute ex post utility for valuations and bids in `[0, 1]`.
    pub fn default_utility_scale(&self) -> f64 {
        match *self {
            MechanismSpec::FirstPriceSingleItem
            | MechanismSpec::FirstPriceCombinatorial { .. } => 1.0,
            MechanismSpec::Discriminatory { units } | MechanismSpec::UniformPrice { units } => {
                units as f64
            }
        }
    }

    /// Multi-unit formats expect every bid vector to be non-increasing.
    pub fn requires_monotone_bids(&self) -> bool {
        matches!(
            self,
            MechanismSpec::Discriminatory { .. } | MechanismSpec::UniformPrice { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            MechanismSpec::FirstPriceSingleItem => "first_price_single_item",
            MechanismSpec::FirstPriceCombinatorial { .. } => "first_price_combinatorial",
            MechanismSpec::Discriminatory { .. } => "discriminatory",
            MechanismSpec::UniformPrice { .. } => "uniform_price",
        }
    }
}

/// What a single agent receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Award {
    /// Number of units (or `0`/`1` for the single item); the first `k` marginal
    /// valuations are realised.
    Units(usize),
    /// Index of the won bundle, if any.
    Bundle(Option<usize>),
}

impl Award {
    /// `x_i . theta_i`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Award::Units(k) => theta[..k].iter().sum(),
            Award::Bundle(Some(b)) => theta[b],
            Award::Bundle(None) => 0.0,
        }
    }

    /// Allocation indicator vector `x_i` of length `dim`.
    pub fn indicator(&self, dim: usize) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        match *self {
            Award::Units(k) => x[..k].iter_mut().for_each(|v| *v = 1.0),
            Award::Bundle(Some(b)) => x[b] = 1.0,
            Award::Bundle(None) => {}
        }
        x
    }

    pub fn indicator_at(&self, coord: usize) -> f64 {
        match *self {
            Award::Units(k) => (coord < k) as u8 as f64,
            Award::Bundle(b) => (b == Some(coord)) as u8 as f64,
        }
    }
}

/// Allocation, payments and normalized utilities of one auction round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub allocation: Vec<Vec<f64>>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
}

/// Utility of agent `i` in a first-price single-item auction (not normalized).
pub fn eval_fpsb(theta_i: f64, bids: &[f64], i: usize) -> f64 {
    let best_other = highest_other(bids, i);
    if bids[i] > best_other {
        theta_i - bids[i]
    } else {
        0.0
    }
}

fn highest_other(bids: &[f64], i: usize) -> f64 {
    bids.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &b)| b)
        .fold(0.0, f64::max)
}

/// Exact winner determination for XOR bundle bids.
///
/// `bids[i][s]` is agent `i`'s bid on the bundle whose item set is the bit mask
/// `s`. Each agent wins at most one non-empty bundle, winners' bundles are
/// item-disjoint and the accepted bid sum is maximal. The empty bundle (index
/// 0) carries no items and is never allocated.
pub fn winner_determination(bids: &[Vec<f64>], items: usize) -> Result<Vec<Option<usize>>> {
    if items == 0 || items > MAX_ITEMS {
        return Err(invalid("items", format!("must lie in 1..={MAX_ITEMS}")));
    }
    let dim = 1usize << items;
    for (i, row) in bids.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Dimension(format!(
                "agent {i} submitted {} bundle bids, expected 2^{items} = {dim}",
                row.len()
            )));
        }
    }
    let rows: Vec<&[f64]> = bids.iter().map(Vec::as_slice).collect();
    Ok(solve_wd(&rows, items))
}

/// Memoized depth-first search over `(agent, used-item mask)`.
pub(crate) fn solve_wd(rows: &[&[f64]], items: usize) -> Vec<Option<usize>> {
    let n = rows.len();
    let masks = 1usize << items;
    let mut memo = vec![f64::NAN; (n + 1) * masks];
    for m in 0..masks {
        memo[n * masks + m] = 0.0;
    }

    fn best(i: usize, used: usize, rows: &[&[f64]], masks: usize, memo: &mut [f64]) -> f64 {
        let slot = i * masks + used;
        if !memo[slot].is_nan() {
            return memo[slot];
        }
        let mut cur = best(i + 1, used, rows, masks, memo);
        for s in 1..masks {
            if s & used != 0 {
                continue;
            }
            let v = rows[i][s] + best(i + 1, used | s, rows, masks, memo);
            if v > cur {
                cur = v;
            }
        }
        memo[slot] = cur;
        cur
    }

    best(0, 0, rows, masks, &mut memo);

    let mut alloc = vec![None; n];
    let mut used = 0usize;
    for (i, slot) in alloc.iter_mut().enumerate() {
        let target = memo[i * masks + used];
        if memo[(i + 1) * masks + used] == target {
            continue;
        }
        for s in 1..masks {
            if s & used != 0 {
                continue;
            }
            let v = rows[i][s] + memo[(i + 1) * masks + (used | s)];
            if v == target {
                *slot = Some(s);
                used |= s;
                break;
            }
        }
    }
    alloc
}

/// Sum of accepted bids of an allocation, in agent order.
pub fn allocation_value(bids: &[Vec<f64>], alloc: &[Option<usize>]) -> f64 {
    alloc
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| bids[i][s]))
        .sum()
}

fn check_monotone(bids: &[Vec<f64>], units: usize) -> Result<()> {
    for (agent, row) in bids.iter().enumerate() {
        if row.len() != units {
            return Err(Error::Dimension(format!(
                "agent {agent} submitted {} unit bids, expected {units}",
                row.len()
            )));
        }
        if row.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::NonMonotoneBids {
                agent,
                bids: row.clone(),
            });
        }
    }
    Ok(())
}

/// Number of units won by each agent (shared by the discriminatory and
/// uniform-price formats).
pub fn multi_unit_counts(bids: &[Vec<f64>], units: usize) -> Result<Vec<usize>> {
    check_monotone(bids, units)?;
    let mut all: Vec<(f64, usize, usize)> = bids
        .iter()
        .enumerate()
        .flat_map(|(a, row)| row.iter().enumerate().map(move |(k, &v)| (v, a, k)))
        .filter(|&(v, _, _)| v > 0.0)
        .collect();
    all.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut counts = vec![0usize; bids.len()];
    for &(_, a, _) in all.iter().take(units) {
        counts[a] += 1;
    }
    Ok(counts)
}

/// Top `units` bids of everyone but agent `i`, ordered `(bid desc, agent asc, index asc)`.
fn competing_bids(bids: &[Vec<f64>], i: usize, units: usize) -> Vec<(f64, usize)> {
    let mut c: Vec<(f64, usize, usize)> = bids
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != i)
        .flat_map(|(a, row)| row.iter().enumerate().map(move |(k, &v)| (v, a, k)))
        .collect();
    c.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    c.truncate(units);
    c.into_iter().map(|(v, a, _)| (v, a)).collect()
}

/// Pay-as-bid utility of agent `i` (not normalized).
pub fn eval_discriminatory(theta_i: &[f64], bids: &[Vec<f64>], i: usize) -> Result<f64> {
    let units = theta_i.len();
    let counts = multi_unit_counts(bids, units)?;
    let won = counts[i];
    Ok(theta_i[..won].iter().sum::<f64>() - bids[i][..won].iter().sum::<f64>())
}

/// Market-clearing price faced by agent `i` when it wins `won` units: the
/// larger of its own highest losing bid and the highest losing competing bid.
/// Indices past the end of either array count as `0`.
pub fn uniform_clearing_price(own: &[f64], competing: &[f64], won: usize) -> f64 {
    let units = own.len();
    let own_losing = own.get(won).copied().unwrap_or(0.0);
    let other_losing = competing.get(units - won).copied().unwrap_or(0.0);
    own_losing.max(other_losing)
}

/// Uniform-price utility of agent `i` (not normalized).
pub fn eval_uniform_price(theta_i: &[f64], bids: &[Vec<f64>], i: usize) -> Result<f64> {
    let units = theta_i.len();
    let counts = multi_unit_counts(bids, units)?;
    let won = counts[i];
    let c: Vec<f64> = competing_bids(bids, i, units).into_iter().map(|x| x.0).collect();
    let price = uniform_clearing_price(&bids[i], &c, won);
    Ok(theta_i[..won].iter().sum::<f64>() - won as f64 * price)
}

/// Full outcome of one round for every agent.
pub fn eval(config: &GameConfig, theta: &[Vec<f64>], bids: &[Vec<f64>]) -> Result<Outcome> {
    let n = config.n_agents;
    let dim = config.mechanism.action_dim();
    if theta.len() != n || bids.len() != n {
        return Err(Error::Dimension(format!(
            "expected {n} valuation and bid vectors, got {} and {}",
            theta.len(),
            bids.len()
        )));
    }
    for i in 0..n {
        if theta[i].len() != dim || bids[i].len() != dim {
            return Err(Error::Dimension(format!(
                "agent {i}: expected vectors of length {dim}"
            )));
        }
    }
    let awards: Vec<(Award, f64)> = match config.mechanism {
        MechanismSpec::FirstPriceSingleItem => {
            let flat: Vec<f64> = bids.iter().map(|b| b[0]).collect();
            (0..n)
                .map(|i| {
                    if flat[i] > highest_other(&flat, i) {
                        (Award::Units(1), flat[i])
                    } else {
                        (Award::Units(0), 0.0)
                    }
                })
                .collect()
        }
        MechanismSpec::FirstPriceCombinatorial { items } => {
            let alloc = winner_determination(bids, items)?;
            alloc
                .iter()
                .enumerate()
                .map(|(i, &s)| (Award::Bundle(s), s.map_or(0.0, |s| bids[i][s])))
                .collect()
        }
        MechanismSpec::Discriminatory { units } => {
            let counts = multi_unit_counts(bids, units)?;
            counts
                .iter()
                .enumerate()
                .map(|(i, &k)| (Award::Units(k), bids[i][..k].iter().sum()))
                .collect()
        }
        MechanismSpec::UniformPrice { units } => {
            let counts = multi_unit_counts(bids, units)?;
            counts
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let c: Vec<f64> =
                        competing_bids(bids, i, units).into_iter().map(|x| x.0).collect();
                    let pay = if k == 0 {
                        0.0
                    } else {
                        k as f64 * uniform_clearing_price(&bids[i], &c, k)
                    };
                    (Award::Units(k), pay)
                })
                .collect()
        }
    };
    let h = config.utility_scale;
    Ok(Outcome {
        allocation: awards.iter().map(|(a, _)| a.indicator(dim)).collect(),
        payments: awards.iter().map(|&(_, p)| p).collect(),
        utilities: awards
            .iter()
            .zip(theta)
            .map(|(&(a, p), th)| (a.value(th) - p) / h)
            .collect(),
    })
}

/// What agent `i` faces from its opponents in one sample, precomputed once so
/// that evaluating many candidate bids is cheap.
#[derive(Debug, Clone)]
pub enum OpponentSummary {
    /// Highest competing bid (single item).
    HighestBid(f64),
    /// Top `m` competing unit bids with the bidder index, `(bid desc, agent asc)`.
    Competing(Vec<(f64, usize)>),
    /// Every agent's bundle bids; agent `i`'s row is replaced at evaluation time.
    Bundles(Vec<Vec<f64>>),
}

impl OpponentSummary {
    pub fn from_profile(mechanism: &MechanismSpec, bids: &[Vec<f64>], i: usize) -> Self {
        match *mechanism {
            MechanismSpec::FirstPriceSingleItem => {
                let flat: Vec<f64> = bids.iter().map(|b| b[0]).collect();
                OpponentSummary::HighestBid(highest_other(&flat, i))
            }
            MechanismSpec::FirstPriceCombinatorial { .. } => {
                OpponentSummary::Bundles(bids.to_vec())
            }
            MechanismSpec::Discriminatory { units } | MechanismSpec::UniformPrice { units } => {
                OpponentSummary::Competing(competing_bids(bids, i, units))
            }
        }
    }

    /// Award and payment for agent `i` bidding `own` (assumed well-formed).
    pub fn award(&self, mechanism: &MechanismSpec, i: usize, own: &[f64]) -> (Award, f64) {
        match (self, mechanism) {
            (OpponentSummary::HighestBid(best), _) => {
                if own[0] > *best {
                    (Award::Units(1), own[0])
                } else {
                    (Award::Units(0), 0.0)
                }
            }
            (OpponentSummary::Competing(c), mech) => {
                let units = own.len();
                let beats = |v: f64, (cv, ca): (f64, usize)| v > cv || (v == cv && i < ca);
                let won = (0..units)
                    .take_while(|&k| own[k] > 0.0 && beats(own[k], c[units - 1 - k]))
                    .count();
                let pay = match mech {
                    MechanismSpec::UniformPrice { .. } if won > 0 => {
                        let own_losing = own.get(won).copied().unwrap_or(0.0);
                        let other_losing = c.get(units - won).map_or(0.0, |x| x.0);
                        won as f64 * own_losing.max(other_losing)
                    }
                    MechanismSpec::UniformPrice { .. } => 0.0,
                    _ => own[..won].iter().sum(),
                };
                (Award::Units(won), pay)
            }
            (OpponentSummary::Bundles(rows), MechanismSpec::FirstPriceCombinatorial { items }) => {
                let refs: Vec<&[f64]> = rows
                    .iter()
                    .enumerate()
                    .map(|(a, r)| if a == i { own } else { r.as_slice() })
                    .collect();
                let alloc = solve_wd(&refs, *items);
                match alloc[i] {
                    Some(s) => (Award::Bundle(Some(s)), own[s]),
                    None => (Award::Bundle(None), 0.0),
                }
            }
            (OpponentSummary::Bundles(_), _) => unreachable!("bundle summary for a non-bundle mechanism"),
        }
    }

    /// Normalized utility of agent `i` with valuation `theta` bidding `own`.
    pub fn utility(&self, mechanism: &MechanismSpec, scale: f64, i: usize, theta: &[f64], own: &[f64]) -> f64 {
        let (award, pay) = self.award(mechanism, i, own);
        (award.value(theta) - pay) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mechanism: MechanismSpec, n: usize) -> GameConfig {
        GameConfig::new(n, mechanism).unwrap()
    }

    #[test]
    fn fpsb_examples() {
        assert!((eval_fpsb(0.8, &[0.5, 0.4, 0.3], 0) - 0.3).abs() < 1e-15);
        assert_eq!(eval_fpsb(0.8, &[0.4, 0.4], 0), 0.0);
        assert!((eval_fpsb(0.2, &[0.5, 0.1], 0) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn fpsb_tie_leaves_item_unsold() {
        let out = eval(&cfg(MechanismSpec::FirstPriceSingleItem, 2), &[vec![0.9], vec![0.7]], &[vec![0.4], vec![0.4]]).unwrap();
        assert_eq!(out.allocation, vec![vec![0.0], vec![0.0]]);
        assert_eq!(out.utilities, vec![0.0, 0.0]);
    }

    #[test]
    fn wd_single_item() {
        let bids = vec![vec![0.0, 0.6], vec![0.0, 0.4]];
        let alloc = winner_determination(&bids, 1).unwrap();
        assert_eq!(alloc, vec![Some(1), None]);
        assert_eq!(allocation_value(&bids, &alloc), 0.6);
    }

    #[test]
    fn wd_splits_bundle_when_singletons_pay_more() {
        // masks: 1 = {1}, 2 = {2}, 3 = {1,2}
        let bids = vec![vec![0.0, 0.0, 0.0, 0.9], vec![0.0, 0.5, 0.5, 0.0]];
        let alloc = winner_determination(&bids, 2).unwrap();
        // agent 1 can hold only one bundle under XOR bidding, so the best is
        // {1,2} to agent 0 (0.9) versus one singleton to agent 1 (0.5).
        assert_eq!(alloc, vec![Some(3), None]);
        assert_eq!(allocation_value(&bids, &alloc), 0.9);
    }

    #[test]
    fn wd_zero_bids_allocate_nothing() {
        let bids = vec![vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]];
        assert_eq!(winner_determination(&bids, 2).unwrap(), vec![None, None, None]);
    }

    #[test]
    fn wd_rejects_bad_dimension() {
        assert!(matches!(
            winner_determination(&[vec![0.1, 0.2, 0.3]], 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn discriminatory_example() {
        let bids = vec![vec![0.8, 0.3], vec![0.6, 0.5]];
        assert_eq!(multi_unit_counts(&bids, 2).unwrap(), vec![1, 1]);
        let out = eval(&cfg(MechanismSpec::Discriminatory { units: 2 }, 2), &[vec![1.0, 0.9], vec![0.7, 0.6]], &bids).unwrap();
        assert_eq!(out.payments, vec![0.8, 0.6]);
    }

    #[test]
    fn discriminatory_zero_bidder_wins_nothing() {
        let bids = vec![vec![0.8, 0.3], vec![0.0, 0.0]];
        assert_eq!(eval_discriminatory(&[0.9, 0.5], &bids, 1).unwrap(), 0.0);
    }

    #[test]
    fn uniform_price_example() {
        let bids = vec![vec![0.8, 0.3], vec![0.6, 0.5]];
        let u = eval_uniform_price(&[1.0, 0.9], &bids, 0).unwrap();
        assert!((u - (1.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn uniform_price_against_zero_opponents_is_free() {
        let bids = vec![vec![0.7, 0.4], vec![0.0, 0.0]];
        let u = eval_uniform_price(&[0.9, 0.6], &bids, 0).unwrap();
        assert!((u - 1.5).abs() < 1e-15);
    }

    #[test]
    fn non_monotone_bids_rejected() {
        let bids = vec![vec![0.3, 0.8], vec![0.6, 0.5]];
        assert!(matches!(
            eval_discriminatory(&[0.9, 0.1], &bids, 0),
            Err(Error::NonMonotoneBids { agent: 0, .. })
        ));
    }

    #[test]
    fn identical_bids_break_ties_by_agent() {
        let bids = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(multi_unit_counts(&bids, 2).unwrap(), vec![2, 0, 0]);
        let out = eval(&cfg(MechanismSpec::UniformPrice { units: 2 }, 3), &vec![vec![0.9, 0.8]; 3], &bids).unwrap();
        assert_eq!(out.payments, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn combinatorial_dispatch_is_quasilinear() {
        let c = cfg(MechanismSpec::FirstPriceCombinatorial { items: 2 }, 2);
        let theta = vec![vec![0.0, 0.7, 0.2, 0.95], vec![0.0, 0.6, 0.6, 0.9]];
        let bids = vec![vec![0.0, 0.1, 0.1, 0.8], vec![0.0, 0.5, 0.5, 0.0]];
        let out = eval(&c, &theta, &bids).unwrap();
        assert_eq!(out.allocation[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert!((out.utilities[0] - (0.95 - 0.8)).abs() < 1e-15);
        assert_eq!(out.utilities[1], 0.0);
    }

    #[test]
    fn normalization_divides_by_scale() {
        let c = cfg(MechanismSpec::Discriminatory { units: 2 }, 2);
        assert_eq!(c.utility_scale, 2.0);
        let out = eval(&c, &[vec![1.0, 1.0], vec![0.0, 0.0]], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(out.utilities, vec![0.0, 0.0]);
        let out = eval(&c, &[vec![1.0, 1.0], vec![0.0, 0.0]], &[vec![0.2, 0.2], vec![0.0, 0.0]]).unwrap();
        assert!((out.utilities[0] - 0.8).abs() < 1e-15);
    }
}
