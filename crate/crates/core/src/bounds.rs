//! Certified error terms and their composition into per-agent bounds.
//!
//! All terms refer to the normalized game (utilities in `[-1, 1]`); reports
//! also carry the total multiplied by the utility scale `H`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::estimator::{ExAnteEstimate, ExInterimEstimate};
use crate::mechanisms::MechanismSpec;
use crate::model::{ConfidenceBudget, Partition};

const E: f64 = std::f64::consts::E;

fn check_common(n: f64, delta: f64) -> Result<()> {
    if !(n >= 1.0) {
        return Err(invalid("N", "need at least one sample"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", "must lie in (0,1)"));
    }
    Ok(())
}

/// `4 sqrt(2d/N ln(eN/d)) + 2 sqrt(2/N ln(2n/delta))`.
pub fn eps_pdim_interim(n_samples: usize, d: f64, n_agents: usize, delta: f64) -> Result<f64> {
    let n = n_samples as f64;
    check_common(n, delta)?;
    if !(d >= 1.0) {
        return Err(invalid("d", "pseudo-dimension must be at least 1"));
    }
    Ok(4.0 * (2.0 * d / n * (E * n / d).ln()).sqrt()
        + 2.0 * (2.0 / n * (2.0 * n_agents as f64 / delta).ln()).sqrt())
}

/// `2 sqrt(2d/N_B ln(eN_B/d)) + sqrt(2/N_B ln(n N_Bmax/delta))`.
pub fn eps_pdim_ex_ante(n_b: usize, d: f64, n_agents: usize, delta: f64, n_b_max: usize) -> Result<f64> {
    let nb = n_b as f64;
    check_common(nb, delta)?;
    if !(d >= 1.0) {
        return Err(invalid("d", "pseudo-dimension must be at least 1"));
    }
    if n_b_max == 0 {
        return Err(invalid("N_Bmax", "must be at least 1"));
    }
    Ok(2.0 * (2.0 * d / nb * (E * nb / d).ln()).sqrt()
        + (2.0 / nb * (n_agents as f64 * n_b_max as f64 / delta).ln()).sqrt())
}

/// `sqrt(2/N ln(2n/delta))`.
pub fn eps_hoeffding(n_samples: usize, n_agents: usize, delta: f64) -> Result<f64> {
    let n = n_samples as f64;
    check_common(n, delta)?;
    Ok((2.0 / n * (2.0 * n_agents as f64 / delta).ln()).sqrt())
}

/// `((N - v)/N) L x + 2v/N` with `v` clamped to `[0, N]`. Returns the value
/// and whether clamping occurred.
pub fn eps_disp(x: f64, n_samples: usize, v: f64, lipschitz: f64) -> (f64, bool) {
    let n = n_samples as f64;
    let clamped = v > n;
    let v = v.clamp(0.0, n);
    (((n - v) / n) * lipschitz * x + 2.0 * v / n, clamped)
}

/// Interval-count bound for the first-price single-item auction:
/// `(n-1) w N_B kappa L + (n-1) sqrt(2 N_B ln(2n(n-1)N_Bmax/delta)) + 4(n-1) sqrt(N_B ln(e N_B/2))`.
/// The independent-prior count uses `N_B = N`, `N_Bmax = 1`.
pub fn dispersion_count_fpsb(
    w: f64,
    n_b: usize,
    n_agents: usize,
    kappa: f64,
    l_inv_max: f64,
    delta: f64,
    n_b_max: usize,
) -> Result<f64> {
    let nb = n_b as f64;
    check_common(nb, delta)?;
    if !(w >= 0.0 && kappa > 0.0 && l_inv_max > 0.0) || n_agents < 2 || n_b_max == 0 {
        return Err(invalid("dispersion", "arguments must be positive"));
    }
    let m = (n_agents - 1) as f64;
    let n = n_agents as f64;
    Ok(m * w * nb * kappa * l_inv_max
        + m * (2.0 * nb * (2.0 * n * m * n_b_max as f64 / delta).ln()).sqrt()
        + 4.0 * m * (nb * (E * nb / 2.0).ln()).sqrt())
}

/// Combinatorial count `c (n+1)^(2l) sqrt(N_B l)`, valid for widths up to
/// `c_w / (kappa L^(2^(l+1)) sqrt(N_B))`. Returns `(v, prescribed_width)`.
pub fn dispersion_count_combinatorial(
    n_b: usize,
    n_agents: usize,
    items: usize,
    kappa: f64,
    l_inv_max: f64,
    constants: &AsymptoticConstants,
) -> (f64, f64) {
    let nb = n_b as f64;
    let v = constants.v * ((n_agents + 1) as f64).powi(2 * items as i32) * (nb * items as f64).sqrt();
    let w_star = constants.width / (kappa * l_inv_max.powi(1 << (items + 1)) * nb.sqrt());
    (v, w_star)
}

/// Multi-unit count `c n m^2 sqrt(N_B)`, valid for widths up to
/// `c_w / (kappa L sqrt(N_B))`. Returns `(v, prescribed_width)`.
pub fn dispersion_count_multiunit(
    n_b: usize,
    n_agents: usize,
    units: usize,
    kappa: f64,
    l_inv_max: f64,
    constants: &AsymptoticConstants,
) -> (f64, f64) {
    let nb = n_b as f64;
    let v = constants.v * n_agents as f64 * (units * units) as f64 * nb.sqrt();
    let w_star = constants.width / (kappa * l_inv_max * nb.sqrt());
    (v, w_star)
}

/// Declared constant factors for the rates known only up to order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticConstants {
    /// Factor on the pseudo-dimension order.
    #[serde(default = "one")]
    pub pdim: f64,
    /// Factor on the dispersion count order.
    #[serde(default = "one")]
    pub v: f64,
    /// Factor on the prescribed dispersion width.
    #[serde(default = "one")]
    pub width: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for AsymptoticConstants {
    fn default() -> Self {
        AsymptoticConstants {
            pdim: 1.0,
            v: 1.0,
            width: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PdimKind {
    Exact,
    AsymptoticDeclaredConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdimSpec {
    pub d: f64,
    pub kind: PdimKind,
}

/// Pseudo-dimension of the utility class: exactly 2 for the single-item
/// auction, otherwise `c l 2^l ln n` (combinatorial) or `c m ln(nm)`
/// (multi-unit), floored at 1.
pub fn pdim_spec(mechanism: &MechanismSpec, n_agents: usize, constants: &AsymptoticConstants) -> PdimSpec {
    let n = n_agents as f64;
    match *mechanism {
        MechanismSpec::FirstPriceSingleItem => PdimSpec {
            d: 2.0,
            kind: PdimKind::Exact,
        },
        MechanismSpec::FirstPriceCombinatorial { items } => PdimSpec {
            d: (constants.pdim * items as f64 * (1u64 << items) as f64 * n.ln()).max(1.0),
            kind: PdimKind::AsymptoticDeclaredConstant,
        },
        MechanismSpec::Discriminatory { units } | MechanismSpec::UniformPrice { units } => PdimSpec {
            d: (constants.pdim * units as f64 * (n * units as f64).ln()).max(1.0),
            kind: PdimKind::AsymptoticDeclaredConstant,
        },
    }
}

/// Piecewise Lipschitz constant of the normalized utility in the bid.
pub fn piecewise_lipschitz(_mechanism: &MechanismSpec) -> f64 {
    1.0
}

/// One evaluated dispersion term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionTerm {
    pub width: f64,
    /// Count from the formula before clamping; `null` when no certified count exists.
    pub v_formula: Option<f64>,
    /// Count used, clamped to the number of samples.
    pub v: f64,
    pub value: f64,
    pub clamped: bool,
    pub asymptotic: bool,
    /// Largest width the asymptotic count is stated for.
    pub prescribed_width: Option<f64>,
}

/// Inputs shared by both assemblies.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub mechanism: MechanismSpec,
    pub n_agents: usize,
    pub utility_scale: f64,
    pub grid_w: f64,
    pub delta_total: f64,
    pub constants: AsymptoticConstants,
    /// `L_inv_max` of the profile; `None` when some strategy is uncertified.
    pub l_inv_max: Option<f64>,
    /// Forward Lipschitz constant of the agent's strategy (ex interim).
    pub l_fwd: Option<f64>,
    /// Density bound of the prior marginals (ex interim).
    pub kappa: Option<f64>,
}

/// Evaluates the dispersion term at `width` for `n_b` samples. Without a
/// density bound or certified strategies the count is taken as `N_B`
/// (all samples may jump), which makes the term vacuous.
pub fn dispersion_term(
    inputs: &BoundInputs,
    width: f64,
    n_b: usize,
    kappa: Option<f64>,
    delta: f64,
    n_b_max: usize,
    flags: &mut Vec<String>,
) -> Result<DispersionTerm> {
    let lip = piecewise_lipschitz(&inputs.mechanism);
    let nb = n_b as f64;
    let (v_formula, asymptotic, prescribed) = match (kappa, inputs.l_inv_max) {
        (Some(k), Some(l)) => match inputs.mechanism {
            MechanismSpec::FirstPriceSingleItem => (
                Some(dispersion_count_fpsb(width, n_b, inputs.n_agents, k, l, delta, n_b_max)?),
                false,
                None,
            ),
            MechanismSpec::FirstPriceCombinatorial { items } => {
                let (v, w) = dispersion_count_combinatorial(n_b, inputs.n_agents, items, k, l, &inputs.constants);
                (Some(v), true, Some(w))
            }
            MechanismSpec::Discriminatory { units } | MechanismSpec::UniformPrice { units } => {
                let (v, w) = dispersion_count_multiunit(n_b, inputs.n_agents, units, k, l, &inputs.constants);
                (Some(v), true, Some(w))
            }
        },
        _ => (None, false, None),
    };
    let mut v = v_formula.unwrap_or(nb);
    if let Some(w_star) = prescribed {
        if width > w_star {
            flag(flags, format!(
                "dispersion width {width} exceeds the prescribed width {w_star:.3e}; count taken as N_B"
            ));
            v = nb;
        }
    }
    if asymptotic {
        flag(flags, "dispersion count: asymptotic order, declared constant".into());
    }
    let (value, clamped) = eps_disp(width, n_b, v, lip);
    if clamped {
        flag(flags, "vacuous dispersion: count exceeds the sample size".into());
    }
    Ok(DispersionTerm {
        width,
        v_formula,
        v: v.min(nb),
        value,
        clamped: clamped || v >= nb,
        asymptotic,
        prescribed_width: prescribed,
    })
}

fn flag(flags: &mut Vec<String>, f: String) {
    if !flags.contains(&f) {
        flags.push(f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellBound {
    pub cell: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_records: usize,
    pub weight: f64,
    pub best_bid: Option<Vec<f64>>,
    pub best_utility: f64,
    pub tau: f64,
    pub kappa: Option<f64>,
    pub eps_pdim: Option<f64>,
    pub dispersion: Option<DispersionTerm>,
    /// `tau + eps_pdim + eps_disp` before clipping.
    pub raw: Option<f64>,
    /// `min(1, raw)`.
    pub clipped: Option<f64>,
    /// `weight * clipped`.
    pub weighted: f64,
    pub unobserved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ExInterim,
    ExAnte,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub mode: Mode,
    pub agent: usize,
    pub mechanism: &'static str,
    pub n_samples: usize,
    pub grid_w: f64,
    pub delta_total: f64,
    pub delta: f64,
    pub multiplicity: usize,
    pub confidence: f64,
    pub utility_scale: f64,
    pub empirical: f64,
    pub argmax: Option<(Vec<f64>, Vec<f64>)>,
    pub pdim: PdimSpec,
    pub eps_pdim: Option<f64>,
    pub dispersion: Vec<DispersionTerm>,
    /// `3 eps_disp(w) + eps_disp(L_fwd w)`.
    pub eps_disp_total: Option<f64>,
    pub eps_hoeffding: Option<f64>,
    pub current_utility: Option<f64>,
    pub cells: Vec<CellBound>,
    pub cells_total: Option<f64>,
    pub total: f64,
    pub total_denormalized: f64,
    pub vacuous: bool,
    pub flags: Vec<String>,
}

impl BoundReport {
    /// Recomputes the total from the stored terms.
    pub fn recomputed_total(&self) -> f64 {
        match self.mode {
            Mode::ExInterim => {
                self.empirical + self.eps_pdim.unwrap_or(0.0) + self.eps_disp_total.unwrap_or(0.0)
            }
            Mode::ExAnte => {
                self.empirical
                    + 2.0 * self.eps_hoeffding.unwrap_or(0.0)
                    + self.cells.iter().map(|c| c.weighted).sum::<f64>()
            }
        }
    }

    /// Stable JSON rendering.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Ex interim bound: `empirical + eps_pdim + 3 eps_disp(w) + eps_disp(L_fwd w)`,
/// holding with probability `1 - 3 delta`.
pub fn assemble_interim(est: &ExInterimEstimate, inputs: &BoundInputs) -> Result<BoundReport> {
    let budget = ConfidenceBudget::split(inputs.delta_total, 3)?;
    let delta = budget.delta;
    let n = est.n_samples;
    let mut flags = Vec::new();
    let pdim = pdim_spec(&inputs.mechanism, inputs.n_agents, &inputs.constants);
    if pdim.kind == PdimKind::AsymptoticDeclaredConstant {
        flag(&mut flags, "pseudo-dimension: asymptotic order, declared constant".into());
    }
    let eps_pdim = eps_pdim_interim(n, pdim.d, inputs.n_agents, delta)?;
    if inputs.kappa.is_none() {
        flag(&mut flags, "no density bound: dispersion terms vacuous".into());
    }
    if inputs.l_inv_max.is_none() {
        flag(&mut flags, "uncertified: dispersion constants invalid".into());
    }
    let w = inputs.grid_w;
    let d_w = dispersion_term(inputs, w, n, inputs.kappa, delta, 1, &mut flags)?;
    let d_lw = match (inputs.l_fwd, est.degraded) {
        (Some(l), false) => dispersion_term(inputs, l * w, n, inputs.kappa, delta, 1, &mut flags)?,
        _ => {
            flag(&mut flags, "degraded: bids only, the L_beta w dispersion term is inapplicable and taken as 2".into());
            let (value, _) = eps_disp(w, n, n as f64, 1.0);
            DispersionTerm {
                width: f64::NAN,
                v_formula: None,
                v: n as f64,
                value,
                clamped: true,
                asymptotic: false,
                prescribed_width: None,
            }
        }
    };
    let eps_disp_total = 3.0 * d_w.value + d_lw.value;
    let total = est.value + eps_pdim + eps_disp_total;
    let all_clamped = d_w.clamped && d_lw.clamped;
    Ok(BoundReport {
        mode: Mode::ExInterim,
        agent: est.agent,
        mechanism: inputs.mechanism.name(),
        n_samples: n,
        grid_w: w,
        delta_total: inputs.delta_total,
        delta,
        multiplicity: 3,
        confidence: budget.confidence(),
        utility_scale: inputs.utility_scale,
        empirical: est.value,
        argmax: Some(est.argmax_pair.clone()),
        pdim,
        eps_pdim: Some(eps_pdim),
        dispersion: vec![d_w, d_lw],
        eps_disp_total: Some(eps_disp_total),
        eps_hoeffding: None,
        current_utility: None,
        cells: Vec::new(),
        cells_total: None,
        total,
        total_denormalized: total * inputs.utility_scale,
        vacuous: all_clamped || total >= 2.0,
        flags,
    })
}

/// Ex ante bound: `empirical + 2 eps_hoeffding + sum_k (N_k/N) min(1, tau_k +
/// eps_pdim(N_k) + eps_disp(N_k))`, holding with probability `1 - 4 delta`.
/// Every cell of `partition` must carry a `tau`; `kappa` may be `None`
/// (unbounded density, the dispersion term is then vacuous).
pub fn assemble_ex_ante(est: &ExAnteEstimate, partition: &Partition, inputs: &BoundInputs) -> Result<BoundReport> {
    let budget = ConfidenceBudget::split(inputs.delta_total, 4)?;
    let delta = budget.delta;
    let n = est.n_samples;
    if partition.cells.len() != est.cells.len() {
        return Err(Error::Dimension("partition and estimate have different cell counts".into()));
    }
    let mut flags = Vec::new();
    let pdim = pdim_spec(&inputs.mechanism, inputs.n_agents, &inputs.constants);
    if pdim.kind == PdimKind::AsymptoticDeclaredConstant {
        flag(&mut flags, "pseudo-dimension: asymptotic order, declared constant".into());
    }
    if inputs.l_inv_max.is_none() {
        flag(&mut flags, "uncertified: dispersion constants invalid".into());
    }
    let hoeffding = eps_hoeffding(n, inputs.n_agents, delta)?;
    let n_b_max = partition.cells.len();
    let mut cells = Vec::with_capacity(est.cells.len());
    for (term, cell) in est.cells.iter().zip(&partition.cells) {
        let tau = cell
            .tau
            .ok_or_else(|| Error::Missing(format!("tau for partition cell {}", term.cell)))?;
        let mut out = CellBound {
            cell: term.cell,
            lo: cell.lo.clone(),
            hi: cell.hi.clone(),
            n_records: term.n_records,
            weight: term.n_records as f64 / n as f64,
            best_bid: term.best_bid.clone(),
            best_utility: term.best_utility,
            tau,
            kappa: cell.kappa,
            eps_pdim: None,
            dispersion: None,
            raw: None,
            clipped: None,
            weighted: 0.0,
            unobserved: term.unobserved,
        };
        if term.unobserved {
            flag(&mut flags, format!("unobserved cell {}", term.cell));
        } else {
            if cell.kappa.is_none() {
                flag(&mut flags, format!("cell {}: unbounded density, dispersion vacuous", term.cell));
            }
            let p = eps_pdim_ex_ante(term.n_records, pdim.d, inputs.n_agents, delta, n_b_max)?;
            let d = dispersion_term(inputs, inputs.grid_w, term.n_records, cell.kappa, delta, n_b_max, &mut flags)?;
            let raw = tau + p + d.value;
            let clipped = raw.min(1.0);
            out.eps_pdim = Some(p);
            out.dispersion = Some(d);
            out.raw = Some(raw);
            out.clipped = Some(clipped);
            out.weighted = out.weight * clipped;
        }
        cells.push(out);
    }
    let cells_total: f64 = cells.iter().map(|c| c.weighted).sum();
    let total = est.value + 2.0 * hoeffding + cells_total;
    let observed: Vec<&CellBound> = cells.iter().filter(|c| !c.unobserved).collect();
    let all_clamped = !observed.is_empty() && observed.iter().all(|c| c.raw.is_some_and(|r| r >= 1.0));
    Ok(BoundReport {
        mode: Mode::ExAnte,
        agent: est.agent,
        mechanism: inputs.mechanism.name(),
        n_samples: n,
        grid_w: inputs.grid_w,
        delta_total: inputs.delta_total,
        delta,
        multiplicity: 4,
        confidence: budget.confidence(),
        utility_scale: inputs.utility_scale,
        empirical: est.value,
        argmax: None,
        pdim,
        eps_pdim: None,
        dispersion: Vec::new(),
        eps_disp_total: None,
        eps_hoeffding: Some(hoeffding),
        current_utility: Some(est.current_utility),
        cells,
        cells_total: Some(cells_total),
        total,
        total_denormalized: total * inputs.utility_scale,
        vacuous: all_clamped || total >= 2.0,
        flags,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

/// Per-cell terms as CSV (header only for ex interim reports).
pub fn cells_csv(report: &BoundReport) -> String {
    let mut out = String::from(
        "cell,lo,hi,n_records,weight,best_bid,best_utility,tau,kappa,eps_pdim,v,eps_disp,raw,clipped,weighted,unobserved\n",
    );
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.cell,
            fmt_vec(&c.lo),
            fmt_vec(&c.hi),
            c.n_records,
            c.weight,
            c.best_bid.as_deref().map(fmt_vec).unwrap_or_default(),
            c.best_utility,
            c.tau,
            fmt_opt(c.kappa),
            fmt_opt(c.eps_pdim),
            fmt_opt(c.dispersion.map(|d| d.v)),
            fmt_opt(c.dispersion.map(|d| d.value)),
            fmt_opt(c.raw),
            fmt_opt(c.clipped),
            c.weighted,
            c.unobserved
        );
    }
    out
}
