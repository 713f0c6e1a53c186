//! Coordinatewise bid maps with certified forward and inverse Lipschitz constants.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyFamily {
    Identity,
    /// `b = c * o` with `c` in `(0, 1]`.
    LinearShade(f64),
    /// `b = o^p` with `p >= 1`.
    Power(f64),
    /// Linear interpolation through `(xs[k], ys[k])`, `xs` from 0 to 1.
    PiecewiseLinear { xs: Vec<f64>, ys: Vec<f64> },
}

/// A bid map acting on each coordinate of an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    family: StrategyFamily,
    /// `(L_fwd, L_inv)`, absent when the inverse is not Lipschitz.
    certificate: Option<(f64, f64)>,
}

impl Strategy {
    pub fn new(family: StrategyFamily) -> Result<Self> {
        let certificate = match &family {
            StrategyFamily::Identity => Some((1.0, 1.0)),
            &StrategyFamily::LinearShade(c) => {
                if !(c > 0.0 && c <= 1.0) {
                    return Err(invalid("params.c", "must lie in (0, 1]"));
                }
                Some((c, 1.0 / c))
            }
            &StrategyFamily::Power(p) => {
                if !(p.is_finite() && p >= 1.0) {
                    return Err(invalid("params.p", "must be a finite number >= 1"));
                }
                // slope p*o^(p-1) vanishes at 0 unless p = 1
                (p == 1.0).then_some((1.0, 1.0))
            }
            StrategyFamily::PiecewiseLinear { xs, ys } => piecewise_certificate(xs, ys)?,
        };
        Ok(Strategy {
            family,
            certificate,
        })
    }

    pub fn identity() -> Self {
        Strategy::new(StrategyFamily::Identity).expect("identity is valid")
    }

    pub fn linear_shade(c: f64) -> Result<Self> {
        Strategy::new(StrategyFamily::LinearShade(c))
    }

    pub fn power(p: f64) -> Result<Self> {
        Strategy::new(StrategyFamily::Power(p))
    }

    pub fn piecewise(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Strategy::new(StrategyFamily::PiecewiseLinear { xs, ys })
    }

    pub fn family(&self) -> &StrategyFamily {
        &self.family
    }

    pub fn is_certified(&self) -> bool {
        self.certificate.is_some()
    }

    /// `(L_fwd, L_inv)`; an error when the strategy's inverse is not Lipschitz.
    pub fn lipschitz_constants(&self) -> Result<(f64, f64)> {
        self.certificate.ok_or_else(|| {
            Error::NotBiLipschitz(match &self.family {
                StrategyFamily::Power(p) => format!("power {p} has zero slope at 0"),
                _ => "piecewise-linear map has a flat segment".into(),
            })
        })
    }

    pub fn apply_scalar(&self, o: f64) -> f64 {
        match &self.family {
            StrategyFamily::Identity => o,
            &StrategyFamily::LinearShade(c) => c * o,
            &StrategyFamily::Power(p) => o.powf(p),
            StrategyFamily::PiecewiseLinear { xs, ys } => interpolate(xs, ys, o),
        }
    }

    pub fn apply(&self, o: &[f64]) -> Vec<f64> {
        o.iter().map(|&x| self.apply_scalar(x)).collect()
    }

    /// Preimage of a bid in the strategy's image (the smallest one on flat segments).
    pub fn inverse_scalar(&self, b: f64) -> f64 {
        match &self.family {
            StrategyFamily::Identity => b,
            &StrategyFamily::LinearShade(c) => b / c,
            &StrategyFamily::Power(p) => b.powf(1.0 / p),
            StrategyFamily::PiecewiseLinear { xs, ys } => {
                let k = ys.partition_point(|&y| y < b).clamp(1, ys.len() - 1);
                let (y0, y1) = (ys[k - 1], ys[k]);
                if y1 == y0 {
                    xs[k - 1]
                } else {
                    xs[k - 1] + (b - y0) * (xs[k] - xs[k - 1]) / (y1 - y0)
                }
            }
        }
    }
}

fn piecewise_certificate(xs: &[f64], ys: &[f64]) -> Result<Option<(f64, f64)>> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(invalid(
            "params.xs",
            "need at least two breakpoints and as many ys as xs",
        ));
    }
    if xs[0] != 0.0 || xs[xs.len() - 1] != 1.0 || xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(
            "params.xs",
            "must be strictly increasing from 0 to 1",
        ));
    }
    if ys.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(invalid("params.ys", "must lie in [0, 1]"));
    }
    let slopes: Vec<f64> = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    if slopes.iter().any(|&s| s < 0.0) {
        return Err(Error::NotBiLipschitz(
            "piecewise-linear map is decreasing on a segment".into(),
        ));
    }
    let max = slopes.iter().copied().fold(0.0, f64::max);
    let min = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((min > 0.0).then(|| (max, 1.0 / min)))
}

fn interpolate(xs: &[f64], ys: &[f64], o: f64) -> f64 {
    let k = xs.partition_point(|&x| x <= o).clamp(1, xs.len() - 1);
    let t = (o - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

/// `kappa * L_inv^m`: density bound of the bids of an agent whose
/// observation density is bounded by `kappa`.
pub fn pushforward_density_bound(kappa: f64, s: &Strategy, m: usize) -> Result<f64> {
    let (_, l_inv) = s.lipschitz_constants()?;
    Ok(kappa * l_inv.powi(m as i32))
}

/// Density bound of the joint bids of two agents whose joint observation
/// density is bounded by `kappa`.
pub fn pushforward_pair_density_bound(kappa: f64, si: &Strategy, sj: &Strategy, m: usize) -> Result<f64> {
    let (_, li) = si.lipschitz_constants()?;
    let (_, lj) = sj.lipschitz_constants()?;
    Ok(kappa * li.powi(m as i32) * lj.powi(m as i32))
}

#[derive(Debug, Clone)]
pub struct StrategyProfile {
    pub strategies: Vec<Strategy>,
}

impl StrategyProfile {
    pub fn new(strategies: Vec<Strategy>) -> Self {
        StrategyProfile { strategies }
    }

    pub fn symmetric(n: usize, s: Strategy) -> Self {
        StrategyProfile {
            strategies: vec![s; n],
        }
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn get(&self, i: usize) -> &Strategy {
        &self.strategies[i]
    }

    /// Largest inverse Lipschitz constant over all agents, computed on demand.
    pub fn l_inv_max(&self) -> Result<f64> {
        self.strategies.iter().try_fold(0.0f64, |acc, s| {
            s.lipschitz_constants().map(|(_, l)| acc.max(l))
        })
    }

    pub fn all_certified(&self) -> bool {
        self.strategies.iter().all(Strategy::is_certified)
    }

    /// Bids of all agents for the given observation profile.
    pub fn apply(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        obs.iter()
            .zip(&self.strategies)
            .map(|(o, s)| s.apply(o))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Identity,
    LinearShade,
    Power,
    PiecewiseLinear,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ys: Option<Vec<f64>>,
}

/// Strategy entry of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub agent: usize,
    pub family: FamilyKind,
    #[serde(default)]
    pub params: StrategyParams,
}

impl StrategySpec {
    pub fn build(&self) -> Result<Strategy> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| invalid(format!("strategies[{}].params.{name}", self.agent), "required"))
        };
        let family = match self.family {
            FamilyKind::Identity => StrategyFamily::Identity,
            FamilyKind::LinearShade => StrategyFamily::LinearShade(need(self.params.c, "c")?),
            FamilyKind::Power => StrategyFamily::Power(need(self.params.p, "p")?),
            FamilyKind::PiecewiseLinear => {
                let get = |v: &Option<Vec<f64>>, name: &str| {
                    v.clone().ok_or_else(|| {
                        invalid(format!("strategies[{}].params.{name}", self.agent), "required")
                    })
                };
                StrategyFamily::PiecewiseLinear {
                    xs: get(&self.params.xs, "xs")?,
                    ys: get(&self.params.ys, "ys")?,
                }
            }
        };
        Strategy::new(family)
    }
}

/// Builds a profile from one spec per agent (in any order).
pub fn build_profile(specs: &[StrategySpec], n: usize) -> Result<StrategyProfile> {
    let mut slots: Vec<Option<Strategy>> = vec![None; n];
    for spec in specs {
        if spec.agent >= n {
            return Err(invalid("strategies.agent", format!("agent {} does not exist", spec.agent)));
        }
        if slots[spec.agent].is_some() {
            return Err(invalid("strategies.agent", format!("agent {} listed twice", spec.agent)));
        }
        slots[spec.agent] = Some(spec.build()?);
    }
    let strategies = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| invalid("strategies", format!("no strategy for agent {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(StrategyProfile { strategies })
}
