//! Grid-search estimators of an agent's utility loss.
//!
//! Opponent-side information is summarized once per record
//! ([`OpponentSummary`]); every candidate bid is then evaluated against all
//! records and reduced with [`pairwise_mean`]. Since allocation and payment do
//! not depend on the bidder's own valuation, the ex interim estimator stores,
//! per candidate bid, the mean allocation vector and mean payment, and obtains
//! the mean utility for any valuation as `(theta . x_bar - p_bar) / H`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::mechanisms::{Award, MechanismSpec, OpponentSummary};
use crate::model::{cell_indices, Dataset, GameConfig, Grid, Partition, DEFAULT_GRID_CAP};
use crate::numeric::{pairwise_mean, Execution};
use crate::strategies::Strategy;

/// Mean allocation vector and mean payment of one bid against a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct AwardStats {
    pub x_bar: Vec<f64>,
    pub p_bar: f64,
}

impl AwardStats {
    /// Mean normalized utility for valuation `theta`.
    pub fn utility(&self, theta: &[f64], scale: f64) -> f64 {
        let value: f64 = theta.iter().zip(&self.x_bar).map(|(t, x)| t * x).sum();
        (value - self.p_bar) / scale
    }
}

/// Per-record opponent summaries for agent `agent`.
pub fn summarize(ds: &Dataset, config: &GameConfig, agent: usize, exec: Execution) -> Vec<OpponentSummary> {
    exec.map_range(ds.len(), |j| {
        OpponentSummary::from_profile(&config.mechanism, &ds.records[j].bids, agent)
    })
}

/// Mean allocation and payment of `bid` over the given records.
pub fn award_stats(
    mechanism: &MechanismSpec,
    agent: usize,
    summaries: &[OpponentSummary],
    records: &[usize],
    bid: &[f64],
) -> AwardStats {
    let awards: Vec<(Award, f64)> = records
        .iter()
        .map(|&j| summaries[j].award(mechanism, agent, bid))
        .collect();
    let len = awards.len();
    AwardStats {
        x_bar: (0..bid.len())
            .map(|c| pairwise_mean(len, |k| awards[k].0.indicator_at(c)))
            .collect(),
        p_bar: pairwise_mean(len, |k| awards[k].1),
    }
}

/// Candidate points of the grid: the non-increasing cone for multi-unit
/// formats, the full lattice otherwise.
pub fn candidate_points(grid: &Grid, mechanism: &MechanismSpec) -> Vec<Vec<f64>> {
    if mechanism.requires_monotone_bids() {
        grid.monotone_points()
    } else {
        grid.points()
    }
}

/// How the current strategy's term is obtained.
#[derive(Debug, Clone, Copy)]
pub enum CurrentTerm<'a> {
    /// `beta_i` is known and evaluated at every grid valuation.
    Strategy(&'a Strategy),
    /// Only bids are available: valuations range over the agent's own sample
    /// valuations and the current term uses the recorded bid.
    BidsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterimMethod {
    /// Precomputed per-bid aggregates (default).
    Separable,
    /// Direct evaluation of every (valuation, bid, record) triple.
    Direct,
}

#[derive(Debug, Clone, Copy)]
pub struct EstimatorOptions {
    pub exec: Execution,
    pub interim_method: InterimMethod,
    /// Keep the per-valuation maximal gains (plot data).
    pub keep_per_point: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            exec: Execution::default(),
            interim_method: InterimMethod::Separable,
            keep_per_point: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointGain {
    pub theta: Vec<f64>,
    pub best_bid: Vec<f64>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExInterimEstimate {
    pub agent: usize,
    pub value: f64,
    /// Maximizing `(theta, theta_hat)`.
    pub argmax_pair: (Vec<f64>, Vec<f64>),
    /// Valuations ranged over the sample instead of the grid.
    pub degraded: bool,
    pub n_samples: usize,
    pub n_valuations: usize,
    pub n_bids: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_point_gains: Option<Vec<PointGain>>,
}

fn check_inputs(ds: &Dataset, config: &GameConfig, grid: &Grid, agent: usize) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if agent >= config.n_agents {
        return Err(invalid("agent", format!("agent {agent} does not exist")));
    }
    if grid.dim != config.obs_dim {
        return Err(Error::Dimension(format!(
            "grid dimension {} does not match the action dimension {}",
            grid.dim, config.obs_dim
        )));
    }
    ds.validate(config)
}

/// Ex interim loss estimate of `agent`:
/// `max_{theta, theta_hat in G} mean_j [u(theta, theta_hat, b_-i^j) - u(theta, beta_i(theta), b_-i^j)]`.
pub fn estimate_ex_interim(
    ds: &Dataset,
    current: CurrentTerm<'_>,
    grid: &Grid,
    config: &GameConfig,
    agent: usize,
    opts: &EstimatorOptions,
) -> Result<ExInterimEstimate> {
    check_inputs(ds, config, grid, agent)?;
    if ds.records.iter().any(|r| r.obs[agent] != r.vals[agent]) {
        return Err(Error::Unsupported(
            "ex interim estimation requires private values (obs == vals for the agent)".into(),
        ));
    }
    let mech = &config.mechanism;
    let h = config.utility_scale;
    let exec = opts.exec;
    let all: Vec<usize> = (0..ds.len()).collect();
    let summaries = summarize(ds, config, agent, exec);
    let bids = candidate_points(grid, mech);

    // valuations and the matching current bids
    let (thetas, current_bids, degraded): (Vec<Vec<f64>>, Vec<Vec<f64>>, bool) = match current {
        CurrentTerm::Strategy(s) => {
            let t = candidate_points(grid, mech);
            let b = t.iter().map(|th| s.apply(th)).collect();
            (t, b, false)
        }
        CurrentTerm::BidsOnly => (
            ds.records.iter().map(|r| r.vals[agent].clone()).collect(),
            ds.records.iter().map(|r| r.bids[agent].clone()).collect(),
            true,
        ),
    };

    let gains_for = |row: &dyn Fn(usize) -> f64| -> (usize, f64) {
        let vals: Vec<f64> = (0..bids.len()).map(row).collect();
        let k = crate::numeric::argmax_first(&vals).expect("non-empty grid");
        (k, vals[k])
    };

    let per_theta: Vec<(usize, f64)> = match opts.interim_method {
        InterimMethod::Separable => {
            let dev = exec.map_range(bids.len(), |k| award_stats(mech, agent, &summaries, &all, &bids[k]));
            let cur = exec.map_range(current_bids.len(), |t| {
                award_stats(mech, agent, &summaries, &all, &current_bids[t])
            });
            exec.map_range(thetas.len(), |t| {
                let base = cur[t].utility(&thetas[t], h);
                gains_for(&|k| dev[k].utility(&thetas[t], h) - base)
            })
        }
        InterimMethod::Direct => exec.map_range(thetas.len(), |t| {
            let th = &thetas[t];
            gains_for(&|k| {
                pairwise_mean(ds.len(), |j| {
                    summaries[j].utility(mech, h, agent, th, &bids[k])
                        - summaries[j].utility(mech, h, agent, th, &current_bids[t])
                })
            })
        }),
    };

    let values: Vec<f64> = per_theta.iter().map(|p| p.1).collect();
    let t_star = crate::numeric::argmax_first(&values).expect("non-empty valuation set");
    let (k_star, value) = per_theta[t_star];
    let per_point_gains = opts.keep_per_point.then(|| {
        per_theta
            .iter()
            .enumerate()
            .map(|(t, &(k, g))| PointGain {
                theta: thetas[t].clone(),
                best_bid: bids[k].clone(),
                gain: g,
            })
            .collect()
    });
    Ok(ExInterimEstimate {
        agent,
        value,
        argmax_pair: (thetas[t_star].clone(), bids[k_star].clone()),
        degraded,
        n_samples: ds.len(),
        n_valuations: thetas.len(),
        n_bids: bids.len(),
        per_point_gains,
    })
}

/// Gain of a single `(theta, theta_hat)` pair, computed exactly as the
/// separable estimator does (used to re-check an argmax).
pub fn interim_pair_gain(
    ds: &Dataset,
    strategy: &Strategy,
    config: &GameConfig,
    agent: usize,
    theta: &[f64],
    theta_hat: &[f64],
) -> f64 {
    let all: Vec<usize> = (0..ds.len()).collect();
    let summaries = summarize(ds, config, agent, Execution::Sequential);
    let dev = award_stats(&config.mechanism, agent, &summaries, &all, theta_hat);
    let cur = award_stats(&config.mechanism, agent, &summaries, &all, &strategy.apply(theta));
    let h = config.utility_scale;
    dev.utility(theta, h) - cur.utility(theta, h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellTerm {
    pub cell: usize,
    pub n_records: usize,
    /// Best grid bid; `None` for a cell without records.
    pub best_bid: Option<Vec<f64>>,
    /// Mean utility of the best bid over the cell's records (0 when empty).
    pub best_utility: f64,
    pub unobserved: bool,
    #[serde(skip)]
    pub curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExAnteEstimate {
    pub agent: usize,
    pub cells: Vec<CellTerm>,
    pub current_utility: f64,
    pub value: f64,
    pub n_samples: usize,
    #[serde(skip)]
    pub candidate_bids: Vec<Vec<f64>>,
}

/// Ex ante loss estimate of `agent`:
/// `sum_k (N_k/N) max_{b in G} mean_{j in B_k} u(theta^j, b, b_-i^j) - mean_j u(theta^j, b_i^j, b_-i^j)`.
/// The current term uses the recorded bids.
pub fn estimate_ex_ante(
    ds: &Dataset,
    partition: &Partition,
    grid: &Grid,
    config: &GameConfig,
    opts: &EstimatorOptions,
) -> Result<ExAnteEstimate> {
    let agent = partition.agent;
    check_inputs(ds, config, grid, agent)?;
    partition.validate(config)?;
    let mech = &config.mechanism;
    let h = config.utility_scale;
    let exec = opts.exec;
    let n = ds.len();
    let summaries = summarize(ds, config, agent, exec);
    let bids = candidate_points(grid, mech);
    let groups = cell_indices(ds, partition)?;

    let mut cells = Vec::with_capacity(groups.len());
    for (k, idx) in groups.iter().enumerate() {
        if idx.is_empty() {
            cells.push(CellTerm {
                cell: k,
                n_records: 0,
                best_bid: None,
                best_utility: 0.0,
                unobserved: true,
                curve: None,
            });
            continue;
        }
        let curve = exec.map_range(bids.len(), |b| {
            pairwise_mean(idx.len(), |q| {
                let j = idx[q];
                summaries[j].utility(mech, h, agent, &ds.records[j].vals[agent], &bids[b])
            })
        });
        let best = crate::numeric::argmax_first(&curve).expect("non-empty grid");
        cells.push(CellTerm {
            cell: k,
            n_records: idx.len(),
            best_bid: Some(bids[best].clone()),
            best_utility: curve[best],
            unobserved: false,
            curve: opts.keep_per_point.then_some(curve),
        });
    }

    let current_utility = pairwise_mean(n, |j| {
        let r = &ds.records[j];
        summaries[j].utility(mech, h, agent, &r.vals[agent], &r.bids[agent])
    });
    let br: f64 = cells
        .iter()
        .map(|c| c.n_records as f64 / n as f64 * c.best_utility)
        .sum();
    Ok(ExAnteEstimate {
        agent,
        cells,
        current_utility,
        value: br - current_utility,
        n_samples: n,
        candidate_bids: bids,
    })
}

/// Exhaustive maximization of the mean utility over a fine lattice of step
/// `resolution`, against the given opponent bid profiles (agent `agent`'s own
/// row is ignored). Returns the first maximizing bid and its mean utility.
pub fn brute_force_best_response(
    config: &GameConfig,
    agent: usize,
    theta: &[f64],
    opponent_profiles: &[Vec<Vec<f64>>],
    resolution: f64,
) -> Result<(Vec<f64>, f64)> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(invalid("resolution", "must lie in (0, 1]"));
    }
    if opponent_profiles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = config.obs_dim;
    let per_axis = (1.0 / resolution).round() as usize + 1;
    let total = (per_axis as u128).saturating_pow(dim as u32);
    if total > DEFAULT_GRID_CAP as u128 {
        return Err(Error::GridTooLarge {
            points: total,
            bytes: total.saturating_mul(dim as u128 * 8),
            cap: DEFAULT_GRID_CAP as u128,
        });
    }
    let summaries: Vec<OpponentSummary> = opponent_profiles
        .iter()
        .map(|p| OpponentSummary::from_profile(&config.mechanism, p, agent))
        .collect();
    let axis: Vec<f64> = (0..per_axis)
        .map(|k| (k as f64 * resolution).min(1.0))
        .collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut bid = vec![0.0; dim];
    for code in 0..total as usize {
        let mut c = code;
        for k in (0..dim).rev() {
            bid[k] = axis[c % per_axis];
            c /= per_axis;
        }
        if config.mechanism.requires_monotone_bids() && bid.windows(2).any(|w| w[0] < w[1]) {
            continue;
        }
        let u = pairwise_mean(summaries.len(), |j| {
            summaries[j].utility(&config.mechanism, config.utility_scale, agent, theta, &bid)
        });
        if best.as_ref().is_none_or(|(_, v)| u > *v) {
            best = Some((bid.clone(), u));
        }
    }
    Ok(best.expect("lattice is non-empty"))
}
