//! Prior distributions, simulated datasets, density bounds and per-cell
//! total-variation radii.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta as BetaDist, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::model::{Cell, Dataset, GameConfig, SampleRecord};
use crate::numeric::Execution;
use crate::oracle::quadrature_tv;
use crate::strategies::StrategyProfile;

/// One-dimensional marginal on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    Uniform { a: f64, b: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Uniform { a, b } => {
                if !(0.0 <= a && a < b && b <= 1.0) {
                    return Err(invalid("prior.marginals", "uniform needs 0 <= a < b <= 1"));
                }
            }
            Marginal::Beta { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
                    return Err(invalid("prior.marginals", "beta needs positive finite parameters"));
                }
            }
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => {
                if (a..=b).contains(&x) {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Marginal::Beta { alpha, beta } => {
                if !(0.0..=1.0).contains(&x) {
                    return 0.0;
                }
                let ln_b = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta);
                let term = |p: f64, y: f64| if p == 1.0 { 0.0 } else { (p - 1.0) * y.ln() };
                (term(alpha, x) + term(beta, 1.0 - x) - ln_b).exp()
            }
        }
    }

    /// Maximum of the density, `None` when unbounded.
    pub fn density_max(&self) -> Option<f64> {
        match *self {
            Marginal::Uniform { a, b } => Some(1.0 / (b - a)),
            Marginal::Beta { alpha, beta } => {
                if alpha < 1.0 || beta < 1.0 {
                    return None;
                }
                let mode = if alpha == 1.0 && beta == 1.0 {
                    0.5
                } else {
                    (alpha - 1.0) / (alpha + beta - 2.0)
                };
                Some(self.pdf(mode))
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            Marginal::Beta { alpha, beta } => BetaDist::new(alpha, beta)
                .expect("validated parameters")
                .sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorModel {
    /// Independent private values. `marginals[i]` holds either one marginal
    /// shared by all of agent `i`'s coordinates or one per coordinate.
    IndependentProduct {
        marginals: Vec<Vec<Marginal>>,
        /// Declared density bound; must dominate every marginal's maximum.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
    /// Common value `theta ~ U[0,1]` shared by all agents; agent `i` observes
    /// `o_i ~ U[0, 2 theta]`, stored as `o_i / 2`.
    CorrelatedCommonValue,
    /// Data supplied from outside; density bounds and radii must be declared.
    ExternalDataOnly {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
}

impl PriorModel {
    pub fn uniform_iid(n: usize) -> Self {
        PriorModel::IndependentProduct {
            marginals: vec![vec![Marginal::Uniform { a: 0.0, b: 1.0 }]; n],
            kappa: None,
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self, PriorModel::IndependentProduct { .. })
    }

    pub fn validate(&self, config: &GameConfig) -> Result<()> {
        match self {
            PriorModel::IndependentProduct { marginals, kappa } => {
                if marginals.len() != config.n_agents {
                    return Err(invalid(
                        "prior.marginals",
                        format!("need one entry per agent ({})", config.n_agents),
                    ));
                }
                for (i, row) in marginals.iter().enumerate() {
                    if row.len() != 1 && row.len() != config.val_dim {
                        return Err(invalid(
                            format!("prior.marginals[{i}]"),
                            format!("need 1 or {} marginals", config.val_dim),
                        ));
                    }
                    for m in row {
                        m.validate()?;
                        if m.density_max().is_none() {
                            return Err(invalid(
                                format!("prior.marginals[{i}]"),
                                "density is unbounded (beta parameters below 1)",
                            ));
                        }
                    }
                }
                if let Some(k) = *kappa {
                    let analytic = self.analytic_kappa(config)?;
                    if k < analytic {
                        return Err(invalid(
                            "prior.kappa",
                            format!("declared {k} is below the density maximum {analytic}"),
                        ));
                    }
                }
                Ok(())
            }
            PriorModel::CorrelatedCommonValue => {
                if config.mechanism.action_dim() != 1 {
                    return Err(Error::Unsupported(
                        "the correlated common-value prior is one-dimensional".into(),
                    ));
                }
                Ok(())
            }
            PriorModel::ExternalDataOnly { kappa } => match kappa {
                Some(k) if !(k.is_finite() && *k > 0.0) => {
                    Err(invalid("prior.kappa", "must be positive and finite"))
                }
                _ => Ok(()),
            },
        }
    }

    pub fn marginal(&self, agent: usize, coord: usize) -> Option<&Marginal> {
        match self {
            PriorModel::IndependentProduct { marginals, .. } => {
                let row = &marginals[agent];
                Some(if row.len() == 1 { &row[0] } else { &row[coord] })
            }
            _ => None,
        }
    }

    /// Largest coordinate density over all agents. Multi-unit valuations are
    /// sorted after drawing, which multiplies the bound by the unit count.
    fn analytic_kappa(&self, config: &GameConfig) -> Result<f64> {
        let PriorModel::IndependentProduct { marginals, .. } = self else {
            return Err(Error::Missing("density bound for a non-product prior".into()));
        };
        let mut k = 0.0f64;
        for row in marginals {
            for m in row {
                k = k.max(m.density_max().ok_or_else(|| invalid("prior.marginals", "unbounded density"))?);
            }
        }
        if config.mechanism.requires_monotone_bids() {
            k *= config.val_dim as f64;
        }
        Ok(k)
    }

    /// Density bound `kappa` on each coordinate of every agent's observation.
    pub fn kappa(&self, config: &GameConfig) -> Result<f64> {
        match self {
            PriorModel::IndependentProduct { kappa: Some(k), .. } => Ok(*k),
            PriorModel::IndependentProduct { .. } => self.analytic_kappa(config),
            // marginal of o_i / 2 has density ln(1/s), unbounded at 0
            PriorModel::CorrelatedCommonValue => Err(Error::Missing(
                "the correlated prior has no global density bound; use per-cell bounds".into(),
            )),
            PriorModel::ExternalDataOnly { kappa } => {
                kappa.ok_or_else(|| Error::Missing("prior.kappa must be declared for external data".into()))
            }
        }
    }

    /// Density bound on the opponents' observations conditional on agent
    /// `agent` observing a point of `cell`; `None` when unbounded.
    pub fn cell_kappa(&self, config: &GameConfig, cell: &Cell) -> Result<Option<f64>> {
        match self {
            PriorModel::IndependentProduct { .. } => self.kappa(config).map(Some),
            PriorModel::CorrelatedCommonValue => Ok(correlated_cell_kappa(cell.lo[0], cell.hi[0])),
            PriorModel::ExternalDataOnly { .. } => Err(Error::Missing(
                "per-cell kappa must be declared in the partition for external data".into(),
            )),
        }
    }

    /// Draws `n_samples` records; record `j` uses its own ChaCha20 stream, so
    /// the result does not depend on the execution mode.
    pub fn sample_dataset(
        &self,
        config: &GameConfig,
        profile: &StrategyProfile,
        n_samples: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Dataset> {
        self.validate(config)?;
        if n_samples == 0 {
            return Err(Error::EmptyDataset);
        }
        if profile.len() != config.n_agents {
            return Err(Error::Dimension(format!(
                "profile has {} strategies for {} agents",
                profile.len(),
                config.n_agents
            )));
        }
        if let PriorModel::ExternalDataOnly { .. } = self {
            return Err(Error::Unsupported("external priors cannot be sampled".into()));
        }
        let records = exec.map_range(n_samples, |j| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            self.draw(config, profile, &mut rng)
        });
        Ok(Dataset {
            records,
            seed: Some(seed),
            config_hash: None,
        })
    }

    fn draw<R: Rng>(&self, config: &GameConfig, profile: &StrategyProfile, rng: &mut R) -> SampleRecord {
        let n = config.n_agents;
        let (obs, vals): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match self {
            PriorModel::IndependentProduct { .. } => {
                let obs: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        let mut v: Vec<f64> = (0..config.obs_dim)
                            .map(|k| self.marginal(i, k).unwrap().sample(rng))
                            .collect();
                        if config.mechanism.requires_monotone_bids() {
                            v.sort_by(|a, b| b.total_cmp(a));
                        }
                        v
                    })
                    .collect();
                (obs.clone(), obs)
            }
            PriorModel::CorrelatedCommonValue => {
                let theta: f64 = rng.random();
                let obs = (0..n).map(|_| vec![theta * rng.random::<f64>()]).collect();
                (obs, vec![vec![theta]; n])
            }
            PriorModel::ExternalDataOnly { .. } => unreachable!("checked by caller"),
        };
        let bids = profile.apply(&obs);
        SampleRecord { obs, vals, bids }
    }
}

/// Posterior density of the common value given a stored observation `s`:
/// `1 / (theta ln(1/s))` on `[s, 1]`.
pub fn correlated_posterior(s: f64) -> impl Fn(f64) -> f64 {
    let norm = (1.0 / s).ln();
    move |theta| {
        if theta >= s && theta <= 1.0 {
            1.0 / (theta * norm)
        } else {
            0.0
        }
    }
}

/// `E[1/theta | s_i in [lo, hi)]`, which bounds the conditional density of any
/// opponent's stored observation. Unbounded when `lo = 0`.
pub fn correlated_cell_kappa(lo: f64, hi: f64) -> Option<f64> {
    if lo <= 0.0 || lo >= hi {
        return None;
    }
    let r = (hi / lo).ln();
    let num = r + lo / hi - 1.0 + (hi - lo) * (1.0 / hi - 1.0);
    let den = (hi - lo) - lo * r - (hi - lo) * hi.ln();
    Some(num / den)
}

/// Nodes per quadrature segment for the TV radius.
pub const TV_POINTS: usize = 1 << 12;
/// Observation pairs per axis probed inside a cell.
pub const TV_PROBES: usize = 16;

/// Certified total-variation radius of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvCertificate {
    /// Upper bound used by the bounds module: quadrature value plus
    /// refinement delta, clipped to 1.
    pub tau: f64,
    /// Largest quadrature value over the probed pairs.
    pub quadrature: f64,
    /// Refinement delta of the maximizing pair.
    pub refinement_delta: f64,
}

impl TvCertificate {
    fn exact(tau: f64) -> Self {
        TvCertificate {
            tau,
            quadrature: tau,
            refinement_delta: 0.0,
        }
    }
}

fn tv_breakpoints(a: f64, b: f64) -> Vec<f64> {
    let mut bp = vec![a, b];
    let mut x = a.min(b);
    while x < 1.0 {
        bp.push(x);
        x *= 2.0;
    }
    bp
}

/// TV distance between the common-value posteriors at stored observations `a` and `b`.
pub fn correlated_pair_tv(a: f64, b: f64) -> Result<crate::oracle::OracleResult> {
    let fa = correlated_posterior(a);
    let fb = correlated_posterior(b);
    quadrature_tv(&fa, &fb, a.min(b), 1.0, TV_POINTS, &tv_breakpoints(a, b))
}

/// Sup over pairs of observations in `cell` of the TV distance between the
/// opponents' conditional distributions.
pub fn tv_radius(prior: &PriorModel, cell: &Cell, exec: Execution) -> Result<TvCertificate> {
    if cell.is_degenerate() {
        return Ok(TvCertificate::exact(0.0));
    }
    match prior {
        PriorModel::IndependentProduct { .. } => Ok(TvCertificate::exact(0.0)),
        PriorModel::CorrelatedCommonValue => {
            let (lo, hi) = (cell.lo[0], cell.hi[0]);
            // posteriors degenerate at 0 (improper) and at 1 (point mass)
            if lo <= 0.0 || hi >= 1.0 {
                return Ok(TvCertificate::exact(1.0));
            }
            let probe = |k: usize| lo + (hi - lo) * k as f64 / (TV_PROBES - 1) as f64;
            let pairs: Vec<(usize, usize)> = (0..TV_PROBES)
                .flat_map(|a| (a + 1..TV_PROBES).map(move |b| (a, b)))
                .collect();
            let results = exec.map_range(pairs.len(), |p| {
                let (a, b) = pairs[p];
                correlated_pair_tv(probe(a), probe(b))
            });
            let mut best = TvCertificate::exact(0.0);
            for r in results {
                let r = r?;
                let bound = r.value + r.error_estimate;
                if bound > best.tau {
                    best = TvCertificate {
                        tau: bound,
                        quadrature: r.value,
                        refinement_delta: r.error_estimate,
                    };
                }
            }
            best.tau = best.tau.min(1.0);
            Ok(best)
        }
        PriorModel::ExternalDataOnly { .. } => Err(Error::Missing(
            "tau must be declared in the partition for external data".into(),
        )),
    }
}

/// `|E_mu[g] - E_nu[g]| <= 2 * sup|g| * d_TV(mu, nu)`.
pub fn tv_integral_bound(g_sup: f64, tau: f64) -> f64 {
    2.0 * g_sup * tau
}
