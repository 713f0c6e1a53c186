//! Batch runs: configuration, dataset generation or loading, estimation,
//! bound assembly and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, AsymptoticConstants, BoundInputs, BoundReport, Mode};
use crate::error::{invalid, Error, Result};
use crate::estimator::{self, CurrentTerm, EstimatorOptions};
use crate::model::{self, sha256_hex, Dataset, GameConfig, Partition, DEFAULT_GRID_CAP};
use crate::numeric::Execution;
use crate::oracle::{self, OracleResult};
use crate::priors::{self, Marginal, PriorModel, TvCertificate};
use crate::strategies::{self, StrategyFamily, StrategyProfile, StrategySpec};

/// Observations drawn for the pushforward density diagnostic.
pub const PUSHFORWARD_SAMPLES: usize = 1_000_000;
/// Histogram bins of the pushforward diagnostic over `[0, 1]`.
pub const PUSHFORWARD_BINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BidsOnly {
    #[serde(rename = "bids_only", alias = "bids-only")]
    BidsOnly,
}

/// Either one strategy per agent or `"bids_only"` (use the recorded bids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategiesInput {
    Profile(Vec<StrategySpec>),
    Keyword(BidsOnly),
}

/// One grid radius or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridWidths {
    Single(f64),
    Sweep(Vec<f64>),
}

impl GridWidths {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridWidths::Single(w) => vec![*w],
            GridWidths::Sweep(ws) => ws.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: GameConfig,
    /// Prior used for simulation and for density bounds and TV radii.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorModel>,
    /// JSONL dataset to load instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub strategies: StrategiesInput,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    pub grid_w: GridWidths,
    pub delta_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Agents to verify in ex interim mode (default: all).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<usize>>,
    #[serde(default)]
    pub constants: AsymptoticConstants,
    #[serde(default = "default_cap")]
    pub grid_cap: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_cap() -> usize {
    DEFAULT_GRID_CAP
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        if let (Some(ds), Some(dir)) = (&cfg.dataset, path.parent()) {
            if ds.is_relative() {
                cfg.dataset = Some(dir.join(ds));
            }
        }
        Ok(cfg)
    }

    /// Canonical JSON; parsing it back and serializing again is byte-identical.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of the canonical JSON; the output directory does not take part.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = default_out();
        sha256_hex(c.to_json().as_bytes())
    }

    fn profile(&self) -> Result<Option<StrategyProfile>> {
        match &self.strategies {
            StrategiesInput::Profile(specs) => Ok(Some(strategies::build_profile(specs, self.game.n_agents)?)),
            StrategiesInput::Keyword(BidsOnly::BidsOnly) => Ok(None),
        }
    }

    fn prior(&self) -> PriorModel {
        self.prior
            .clone()
            .unwrap_or(PriorModel::ExternalDataOnly { kappa: None })
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        model::ConfidenceBudget::split(self.delta_total, 4)?;
        let widths = self.grid_w.values();
        if widths.is_empty() {
            return Err(invalid("grid_w", "at least one width is required"));
        }
        for (k, w) in widths.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(invalid(format!("grid_w[{k}]"), "must be positive and finite"));
            }
            model::make_grid_capped(self.game.obs_dim, *w, self.grid_cap)?;
        }
        let prior = self.prior();
        prior.validate(&self.game)?;
        let profile = self.profile()?;
        match (&self.dataset, self.n_samples) {
            (None, None) => return Err(invalid("n_samples", "required when no dataset is given")),
            (None, Some(0)) => return Err(invalid("n_samples", "must be positive")),
            (Some(_), Some(_)) => return Err(invalid("n_samples", "not allowed together with a dataset")),
            (None, Some(_)) => {
                if self.prior.is_none() {
                    return Err(invalid("prior", "required for simulation"));
                }
                if profile.is_none() {
                    return Err(invalid("strategies", "simulation needs a strategy per agent"));
                }
            }
            (Some(_), None) => {}
        }
        match self.mode {
            Mode::ExInterim => {
                if matches!(prior, PriorModel::CorrelatedCommonValue) {
                    return Err(invalid("mode", "ex_interim requires independent private values"));
                }
                if self.partition.is_some() {
                    return Err(invalid("partition", "only used in ex_ante mode"));
                }
                for &a in self.agents.iter().flatten() {
                    if a >= self.game.n_agents {
                        return Err(invalid("agents", format!("agent {a} does not exist")));
                    }
                }
            }
            Mode::ExAnte => {
                let p = self
                    .partition
                    .as_ref()
                    .ok_or_else(|| invalid("partition", "required in ex_ante mode"))?;
                p.validate(&self.game)?;
                if self.agents.is_some() {
                    return Err(invalid("agents", "ex_ante mode verifies the partition's agent"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub exec: Execution,
    /// Attach oracle diagnostics where a reference exists.
    pub oracle: bool,
    /// Write report files to `out_dir`.
    pub write: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            exec: Execution::default(),
            oracle: false,
            write: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSection {
    /// Ex interim loss of a linear shade against the textbook equilibrium.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_loss: Option<OracleResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One report file: a bound together with the provenance hashes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: Option<u64>,
    pub bound: BoundReport,
    /// TV certificates of the cells whose radius was derived from the prior.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tv_certificates: Vec<Option<TvCertificate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(skip)]
    pub plot: Vec<PlotRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// One row of plot data; `cell` is set for ex ante curves.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub cell: Option<usize>,
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<RunReport>,
    pub files: Vec<PathBuf>,
    pub dataset: Dataset,
}

impl RunOutcome {
    /// 3 when every report is vacuous, else 0.
    pub fn exit_code(&self) -> i32 {
        if !self.reports.is_empty() && self.reports.iter().all(|r| r.bound.vacuous) {
            3
        } else {
            0
        }
    }
}

/// Exit code for a failed run: 1 for I/O, 2 for invalid input.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

/// Plot data CSV: `x,empirical_gain` for ex interim reports (best gain at
/// each grid valuation) and `cell,x,mean_utility` for ex ante reports.
pub fn plot_csv(report: &RunReport) -> String {
    let mut out = match report.bound.mode {
        Mode::ExInterim => String::from("x,empirical_gain\n"),
        Mode::ExAnte => String::from("cell,x,mean_utility\n"),
    };
    for row in &report.plot {
        match row.cell {
            Some(c) => writeln!(out, "{c},{},{}", join(&row.x), row.value),
            None => writeln!(out, "{},{}", join(&row.x), row.value),
        }
        .expect("write to string");
    }
    out
}

pub fn emit_plot_data(report: &RunReport, path: &Path) -> Result<()> {
    fs::write(path, plot_csv(report))?;
    Ok(())
}

/// Histogram of `samples` bids over `[0, 1]` against the certified density
/// bound. Columns: bin center, density estimate, certified bound (empty when
/// uncertified), three-sigma sampling tolerance of the bin.
pub fn pushforward_csv(bids: &[f64], bound: Option<f64>, bins: usize) -> String {
    let mut counts = vec![0usize; bins];
    for &b in bids {
        let k = ((b * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = bids.len() as f64;
    let width = 1.0 / bins as f64;
    let mut out = String::from("bid,density_estimate,certified_bound,tolerance\n");
    for (k, &c) in counts.iter().enumerate() {
        let p = c as f64 / n;
        let tol = 3.0 * (p * (1.0 - p) / n).sqrt() / width;
        writeln!(
            out,
            "{},{},{},{}",
            (k as f64 + 0.5) * width,
            p / width,
            bound.map(|b| b.to_string()).unwrap_or_default(),
            tol
        )
        .expect("write to string");
    }
    out
}

/// Pushes `samples` draws of `marginal` through `family` (first coordinate).
pub fn pushforward_bids(marginal: &Marginal, strategy: &strategies::Strategy, samples: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..samples)
        .map(|_| strategy.apply_scalar(marginal.sample(&mut rng)))
        .collect()
}

fn fpsb_oracle(cfg: &RunConfig, profile: Option<&StrategyProfile>, agent: usize) -> OracleSection {
    let n = cfg.game.n_agents;
    let uniform = match &cfg.prior {
        Some(PriorModel::IndependentProduct { marginals, .. }) => marginals
            .iter()
            .flatten()
            .all(|m| *m == Marginal::Uniform { a: 0.0, b: 1.0 }),
        _ => false,
    };
    let slope = |f: &StrategyFamily| match f {
        StrategyFamily::Identity => Some(1.0),
        StrategyFamily::LinearShade(c) => Some(*c),
        _ => None,
    };
    let eq = (n - 1) as f64 / n as f64;
    let applicable = cfg.game.mechanism == crate::MechanismSpec::FirstPriceSingleItem
        && uniform
        && profile.is_some_and(|p| {
            slope(p.get(agent).family()).is_some()
                && (0..n)
                    .filter(|&j| j != agent)
                    .all(|j| slope(p.get(j).family()).is_some_and(|c| (c - eq).abs() < 1e-12))
        });
    if !applicable {
        return OracleSection {
            analytic_loss: None,
            note: Some(
                "no reference: needs a first-price auction, uniform priors, opponents at the linear equilibrium".into(),
            ),
        };
    }
    let c = slope(profile.unwrap().get(agent).family()).unwrap();
    OracleSection {
        analytic_loss: Some(oracle::analytic_fpsb_loss(n, c)),
        note: None,
    }
}

fn report_stem(mode: Mode, agent: usize, w: f64) -> String {
    let m = match mode {
        Mode::ExInterim => "ex_interim",
        Mode::ExAnte => "ex_ante",
    };
    format!("{m}_agent{agent}_w{w}")
}

/// Fills unset `tau` and `kappa` of every cell from the prior.
pub fn resolve_partition(
    partition: &Partition,
    prior: &PriorModel,
    game: &GameConfig,
    exec: Execution,
) -> Result<(Partition, Vec<Option<TvCertificate>>)> {
    let mut p = partition.clone();
    let mut certs = Vec::with_capacity(p.cells.len());
    for (k, cell) in p.cells.iter_mut().enumerate() {
        if cell.tau.is_none() {
            let cert = priors::tv_radius(prior, cell, exec)
                .map_err(|e| invalid(format!("partition.cells[{k}].tau"), e.to_string()))?;
            cell.tau = Some(cert.tau);
            certs.push(Some(cert));
        } else {
            certs.push(None);
        }
        if cell.kappa.is_none() {
            cell.kappa = match prior {
                PriorModel::ExternalDataOnly { kappa } => *kappa,
                _ => prior.cell_kappa(game, cell)?,
            };
        }
    }
    Ok((p, certs))
}

/// Runs the configured verification and writes the report files.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let game = &cfg.game;
    let prior = cfg.prior();
    let profile = cfg.profile()?;
    let config_hash = cfg.hash();

    let dataset = match (&cfg.dataset, cfg.n_samples) {
        (Some(path), _) => model::load_dataset(path, game)?,
        (None, Some(n)) => prior.sample_dataset(game, profile.as_ref().expect("validated"), n, cfg.seed, opts.exec)?,
        (None, None) => unreachable!("validated"),
    };
    let dataset_hash = dataset.hash();
    let est_opts = EstimatorOptions {
        exec: opts.exec,
        ..EstimatorOptions::default()
    };
    let l_inv_max = profile.as_ref().and_then(|p| p.l_inv_max().ok());

    let mut reports = Vec::new();
    for w in cfg.grid_w.values() {
        let grid = model::make_grid_capped(game.obs_dim, w, cfg.grid_cap)?;
        let base = BoundInputs {
            mechanism: game.mechanism,
            n_agents: game.n_agents,
            utility_scale: game.utility_scale,
            grid_w: w,
            delta_total: cfg.delta_total,
            constants: cfg.constants,
            l_inv_max,
            l_fwd: None,
            kappa: None,
        };
        match cfg.mode {
            Mode::ExInterim => {
                let agents: Vec<usize> = cfg.agents.clone().unwrap_or_else(|| (0..game.n_agents).collect());
                for agent in agents {
                    let current = match &profile {
                        Some(p) => CurrentTerm::Strategy(p.get(agent)),
                        None => CurrentTerm::BidsOnly,
                    };
                    let est = estimator::estimate_ex_interim(&dataset, current, &grid, game, agent, &est_opts)?;
                    let inputs = BoundInputs {
                        l_fwd: profile.as_ref().and_then(|p| p.get(agent).lipschitz_constants().ok().map(|l| l.0)),
                        kappa: prior.kappa(game).ok(),
                        ..base.clone()
                    };
                    let mut bound = bounds::assemble_interim(&est, &inputs)?;
                    if matches!(prior, PriorModel::ExternalDataOnly { .. }) {
                        bound.flags.push("independence of the external data is assumed, not checked".into());
                    }
                    let plot = est
                        .per_point_gains
                        .iter()
                        .flatten()
                        .map(|g| PlotRow {
                            cell: None,
                            x: g.theta.clone(),
                            value: g.gain,
                        })
                        .collect();
                    reports.push(RunReport {
                        config_hash: config_hash.clone(),
                        dataset_hash: dataset_hash.clone(),
                        seed: dataset.seed,
                        bound,
                        tv_certificates: Vec::new(),
                        oracle: opts.oracle.then(|| fpsb_oracle(cfg, profile.as_ref(), agent)),
                        plot,
                    });
                }
            }
            Mode::ExAnte => {
                let partition = cfg.partition.as_ref().expect("validated");
                let (resolved, certs) = resolve_partition(partition, &prior, game, opts.exec)?;
                let est = estimator::estimate_ex_ante(&dataset, &resolved, &grid, game, &est_opts)?;
                let bound = bounds::assemble_ex_ante(&est, &resolved, &base)?;
                let mut plot = Vec::new();
                for c in &est.cells {
                    for (b, u) in est.candidate_bids.iter().zip(c.curve.iter().flatten()) {
                        plot.push(PlotRow {
                            cell: Some(c.cell),
                            x: b.clone(),
                            value: *u,
                        });
                    }
                }
                let oracle = opts.oracle.then(|| OracleSection {
                    analytic_loss: None,
                    note: Some("per-cell TV quadrature reported in tv_certificates".into()),
                });
                reports.push(RunReport {
                    config_hash: config_hash.clone(),
                    dataset_hash: dataset_hash.clone(),
                    seed: dataset.seed,
                    bound,
                    tv_certificates: if certs.iter().any(Option::is_some) { certs } else { Vec::new() },
                    oracle,
                    plot,
                });
            }
        }
    }

    let mut files = Vec::new();
    if opts.write {
        fs::create_dir_all(&cfg.out_dir)?;
        for r in &reports {
            let stem = report_stem(r.bound.mode, r.bound.agent, r.bound.grid_w);
            let json = cfg.out_dir.join(format!("{stem}.json"));
            fs::write(&json, r.to_json())?;
            let cells = cfg.out_dir.join(format!("{stem}_cells.csv"));
            fs::write(&cells, bounds::cells_csv(&r.bound))?;
            let plot = cfg.out_dir.join(format!("{stem}_plot.csv"));
            emit_plot_data(r, &plot)?;
            files.extend([json, cells, plot]);
        }
        if let Some(p) = &profile {
            files.extend(write_pushforward(cfg, &prior, p)?);
        }
    }
    Ok(RunOutcome {
        reports,
        files,
        dataset,
    })
}

fn write_pushforward(cfg: &RunConfig, prior: &PriorModel, profile: &StrategyProfile) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if cfg.game.obs_dim != 1 {
        return Ok(files);
    }
    for i in 0..cfg.game.n_agents {
        let Some(m) = prior.marginal(i, 0) else {
            return Ok(files);
        };
        let s = profile.get(i);
        let kappa = match prior {
            PriorModel::IndependentProduct { kappa: Some(k), .. } => Some(*k),
            _ => m.density_max(),
        };
        let bound = kappa.and_then(|k| strategies::pushforward_density_bound(k, s, 1).ok());
        let bids = pushforward_bids(m, s, PUSHFORWARD_SAMPLES, cfg.seed, u64::MAX - i as u64);
        let path = cfg.out_dir.join(format!("pushforward_agent{i}.csv"));
        fs::write(&path, pushforward_csv(&bids, bound, PUSHFORWARD_BINS))?;
        files.push(path);
    }
    Ok(files)
}
